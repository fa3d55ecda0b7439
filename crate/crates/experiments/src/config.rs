use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sdre_core::identification::{AreFailurePolicy, BlrConfig, NoiseSpec, UpdateRule};
use sdre_core::integrate::NewtonOptions;
use sdre_core::pde::{Benchmark, BoxRegion, ModelGeometry};
use sdre_core::riccati::{SdreOptions, SolverOptions};
use sdre_core::rom::{DeimFidelity, RankSelection, SnapshotStrategy};

use crate::ExperimentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    AllenCahn,
    Advection,
}

impl From<Problem> for Benchmark {
    fn from(p: Problem) -> Self {
        match p {
            Problem::AllenCahn => Benchmark::AllenCahn,
            Problem::Advection => Benchmark::Advection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n1: usize,
    pub n2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    pub horizon: f64,
}

/// `[lo1, hi1, lo2, hi2]`
pub type BoxSpec = [f64; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Coefficients of the simulated plant; only the plant reads them.
    pub mu_true: Vec<f64>,
    pub control_weight: f64,
    pub actuator: Vec<BoxSpec>,
    /// One list of boxes per observation region.
    pub observation: Vec<Vec<BoxSpec>>,
    /// Admissible parameter box, recorded in reports only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub domain: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub mean: Vec<f64>,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    Uncontrolled,
    SdreControlled,
    LinearizedGrid,
    LinearizedAdjoint,
}

impl From<StrategyName> for SnapshotStrategy {
    fn from(s: StrategyName) -> Self {
        match s {
            StrategyName::Uncontrolled => SnapshotStrategy::Uncontrolled,
            StrategyName::SdreControlled => SnapshotStrategy::SdreControlled,
            StrategyName::LinearizedGrid => SnapshotStrategy::LinearizedGrid,
            StrategyName::LinearizedAdjoint => SnapshotStrategy::LinearizedAdjoint,
        }
    }
}

impl StrategyName {
    pub const ALL: [StrategyName; 4] = [
        StrategyName::Uncontrolled,
        StrategyName::SdreControlled,
        StrategyName::LinearizedGrid,
        StrategyName::LinearizedAdjoint,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StrategyName::Uncontrolled => "uncontrolled",
            StrategyName::SdreControlled => "sdre-controlled",
            StrategyName::LinearizedGrid => "linearized-grid",
            StrategyName::LinearizedAdjoint => "linearized-adjoint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotConfig {
    pub strategy: StrategyName,
    /// Per-coefficient value lists; the linearization grid is their Cartesian product.
    pub axes: Vec<Vec<f64>>,
    pub stride: usize,
    /// Parameter for the uncontrolled and SDRE strategies (defaults to the plant's).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_mu: Option<Vec<f64>>,
}

impl SnapshotConfig {
    pub fn grid(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![Vec::new()];
        for axis in &self.axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FidelityName {
    PerTerm,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionConfig {
    /// Fixed POD size; the numerical rank at `pod_tol` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pod_rank: Option<usize>,
    pub pod_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deim_rank: Option<usize>,
    pub deim_tol: f64,
    pub fidelity: FidelityName,
}

impl ReductionConfig {
    pub fn pod_selection(&self) -> RankSelection {
        self.pod_rank.map_or(RankSelection::Tolerance(self.pod_tol), RankSelection::Fixed)
    }

    pub fn deim_selection(&self) -> RankSelection {
        self.deim_rank.map_or(RankSelection::Tolerance(self.deim_tol), RankSelection::Fixed)
    }

    pub fn fidelity(&self) -> DeimFidelity {
        match self.fidelity {
            FidelityName::PerTerm => DeimFidelity::PerTerm,
            FidelityName::Combined => DeimFidelity::Combined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_hat: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRuleName {
    FreezeAfterConvergence,
    GatedOnSmallStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlrSection {
    pub sigma2: f64,
    pub tol_mu: f64,
    pub update_rule: UpdateRuleName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationName {
    Reduced,
    FullProjected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub dense_threshold: usize,
    pub reduced_observation: ObservationName,
    #[serde(default)]
    pub on_are_failure: AreFailureName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AreFailureName {
    #[default]
    Abort,
    HoldLastGain,
}

impl AreFailureName {
    pub fn policy(self) -> AreFailurePolicy {
        match self {
            AreFailureName::Abort => AreFailurePolicy::Abort,
            AreFailureName::HoldLastGain => AreFailurePolicy::HoldLastGain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: Problem,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub model: ModelConfig,
    pub prior: PriorConfig,
    pub snapshots: SnapshotConfig,
    pub reduction: ReductionConfig,
    pub noise: NoiseConfig,
    pub blr: BlrSection,
    pub solver: SolverConfig,
}

fn boxes(specs: &[BoxSpec]) -> Vec<BoxRegion> {
    specs.iter().map(|b| BoxRegion::new(b[0], b[1], b[2], b[3])).collect()
}

fn invalid(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let n = self.model.mu_true.len();
        if self.grid.n1 < 3 || self.grid.n2 < 3 {
            return Err(invalid("grid needs at least 3 nodes per direction"));
        }
        if !(self.time.dt > 0.0) || !(self.time.horizon >= self.time.dt) {
            return Err(invalid("time.dt must be positive and no larger than time.horizon"));
        }
        if n != 3 {
            return Err(invalid(format!("both benchmarks have 3 terms, mu_true has {n}")));
        }
        if self.prior.mean.len() != n {
            return Err(invalid("prior.mean must have one entry per term"));
        }
        if !(self.prior.scale > 0.0) || !(self.model.control_weight > 0.0) {
            return Err(invalid("prior.scale and model.control_weight must be positive"));
        }
        if self.model.actuator.is_empty() || self.model.observation.iter().any(Vec::is_empty) || self.model.observation.is_empty() {
            return Err(invalid("actuator and every observation region need at least one box"));
        }
        let strategy: SnapshotStrategy = self.snapshots.strategy.into();
        if strategy.uses_grid() && (self.snapshots.axes.len() != n || self.snapshots.axes.iter().any(Vec::is_empty)) {
            return Err(invalid("snapshots.axes needs one nonempty value list per term"));
        }
        if self.snapshots.stride == 0 {
            return Err(invalid("snapshots.stride must be at least 1"));
        }
        if let Some(mu) = &self.snapshots.known_mu {
            if mu.len() != n {
                return Err(invalid("snapshots.known_mu must have one entry per term"));
            }
        }
        if self.reduction.pod_rank == Some(0) || self.reduction.deim_rank == Some(0) {
            return Err(invalid("reduced dimensions must be positive"));
        }
        if !(self.noise.sigma_hat >= 0.0) {
            return Err(invalid("noise.sigma_hat must be non-negative"));
        }
        if !(self.blr.sigma2 > 0.0) || !(self.blr.tol_mu >= 0.0) {
            return Err(invalid("blr.sigma2 must be positive and blr.tol_mu non-negative"));
        }
        if !(self.solver.newton_tol > 0.0) || self.solver.newton_max_iters == 0 {
            return Err(invalid("solver Newton settings must be positive"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> ModelGeometry {
        ModelGeometry {
            actuator: boxes(&self.model.actuator),
            observation: self.model.observation.iter().map(|b| boxes(b)).collect(),
            control_weight: self.model.control_weight,
        }
    }

    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.solver.newton_tol,
            max_iters: self.solver.newton_max_iters,
        }
    }

    pub fn sdre_options(&self) -> SdreOptions {
        SdreOptions {
            newton: self.newton(),
            solver: SolverOptions {
                dense_threshold: self.solver.dense_threshold,
                ..SolverOptions::default()
            },
            ..SdreOptions::default()
        }
    }

    pub fn blr(&self) -> BlrConfig {
        BlrConfig {
            sigma2: self.blr.sigma2,
            tol_mu: self.blr.tol_mu,
            update_rule: match self.blr.update_rule {
                UpdateRuleName::FreezeAfterConvergence => UpdateRule::FreezeAfterConvergence,
                UpdateRuleName::GatedOnSmallStep => UpdateRule::GatedOnSmallStep,
            },
            prior_scale: self.prior.scale,
        }
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            sigma_hat: self.noise.sigma_hat,
            seed: self.noise.seed,
        }
    }

    pub fn known_mu(&self) -> Vec<f64> {
        self.snapshots.known_mu.clone().unwrap_or_else(|| self.model.mu_true.clone())
    }

    /// Output directory: `$SDRE_ROM_OUT/<name>` (default root `out`).
    pub fn output_dir(&self) -> PathBuf {
        let root = std::env::var_os(crate::OUTPUT_ENV).map_or_else(|| PathBuf::from("out"), PathBuf::from);
        root.join(&self.name)
    }
}
