use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array1;

use sdre_core::identification::{
    run_online_full, run_online_reduced, write_steps_csv, NoiseSpec, OnlineRun, OnlineSetup,
    ParameterPosterior, ReducedObservation, StepRecord,
};
use sdre_core::integrate::{simulate_trajectory, FullDynamics, FullPlant, Plant, TimeGrid, Trajectory};
use sdre_core::pde::{initial_condition, Benchmark, GridSpec, SemilinearModel};
use sdre_core::riccati::run_sdre;
use sdre_core::rom::{
    collect_snapshots, compute_pod_basis, error_metrics, load_reduced, reduce_operators, reduced_artifact,
    run_pod_deim_sdre, Artifact, DeimSetup, PodBasis, RankSelection, ReducedDynamics, ReducedModel,
    ReducedRun, ReducedTerm, SnapshotRequest, SnapshotSet, SnapshotStrategy,
};

use crate::config::{ExperimentConfig, ObservationName, StrategyName};
use crate::report::{write_sweep_csv, OfflineSummary, RunReport, RunSummary, SweepPoint, TimingReport, REPORT_VERSION};
use crate::ExperimentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Algorithm {
    /// `u ≡ 0` under the true coefficients.
    Uncontrolled,
    /// Full-order SDRE with the true coefficients known.
    Sdre,
    /// Full-order online identification and control.
    FullId,
    /// Reduced online identification and control.
    ReducedId,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Uncontrolled,
        Algorithm::Sdre,
        Algorithm::FullId,
        Algorithm::ReducedId,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Uncontrolled => "uncontrolled",
            Algorithm::Sdre => "sdre",
            Algorithm::FullId => "full-id",
            Algorithm::ReducedId => "reduced-id",
        }
    }
}

/// One finished closed-loop (or open-loop) run with its per-step log.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// Full-dimensional states (lifted for reduced runs).
    pub trajectory: Trajectory,
    pub cost: f64,
    pub final_mean: Option<Vec<f64>>,
    pub history: Vec<StepRecord>,
    pub contraction_violations: usize,
    /// Steps where the ARE had no stabilizing solution and the previous gain was held.
    pub held_steps: usize,
}

impl Outcome {
    pub fn terminal_inf_norm(&self) -> f64 {
        self.trajectory.final_state().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn from_online(run: OnlineRun) -> Self {
        Outcome {
            cost: run.cost,
            final_mean: Some(run.posterior.mean.to_vec()),
            contraction_violations: run.contraction_violations,
            held_steps: run.held_steps,
            history: run.history,
            trajectory: run.trajectory,
        }
    }
}

/// Snapshots, bases and reduced operators of the offline phase.
#[derive(Debug, Clone)]
pub struct OfflineProducts {
    pub snapshots: Option<SnapshotSet>,
    pub pod: PodBasis,
    pub deim: DeimSetup,
    pub reduced: ReducedModel,
}

impl OfflineProducts {
    pub fn deim_sizes(&self) -> Vec<usize> {
        self.reduced
            .terms
            .iter()
            .map(|t| match t {
                ReducedTerm::Deim(d) => d.indices.len(),
                ReducedTerm::Galerkin(_) => 0,
            })
            .collect()
    }

    pub fn artifact(&self) -> Artifact {
        reduced_artifact(&self.pod, &self.deim, &self.reduced)
    }
}

/// A configured problem instance: operator library, hidden plant, initial state and time grid.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub grid: GridSpec,
    pub model: SemilinearModel,
    pub x0: Array1<f64>,
    pub time: TimeGrid,
    plant: Plant<FullPlant>,
}

fn relative_errors(estimate: &[f64], truth: &[f64]) -> Vec<f64> {
    estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| if *t == 0.0 { (e - t).abs() } else { ((e - t) / t).abs() })
        .collect()
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let grid = GridSpec::new(config.grid.n1, config.grid.n2)?;
        let model = Benchmark::from(config.problem).build(&grid, &config.geometry())?;
        let x0 = initial_condition(&grid);
        let time = TimeGrid::with_horizon(config.time.dt, config.time.horizon)?;
        let plant = FullPlant::new(model.clone(), config.model.mu_true.clone(), config.newton());
        Ok(Experiment {
            config,
            grid,
            model,
            x0,
            time,
            plant,
        })
    }

    pub fn mu_true(&self) -> &[f64] {
        &self.config.model.mu_true
    }

    pub fn plant(&self) -> &Plant<FullPlant> {
        &self.plant
    }

    fn prior(&self) -> Result<ParameterPosterior, ExperimentError> {
        Ok(ParameterPosterior::isotropic(
            Array1::from(self.config.prior.mean.clone()),
            self.config.prior.scale,
        )?)
    }

    fn setup(&self, noise: NoiseSpec) -> Result<OnlineSetup<'_>, ExperimentError> {
        Ok(OnlineSetup {
            model: &self.model,
            x0: &self.x0,
            time: &self.time,
            prior: self.prior()?,
            blr: self.config.blr(),
            noise,
            on_are_failure: self.config.solver.on_are_failure.policy(),
        })
    }

    /// Log rows for a run with known coefficients (zero posterior variance, no updates).
    fn known_parameter_history(&self, traj: &Trajectory, seconds: &[f64]) -> Vec<StepRecord> {
        let mu = self.mu_true().to_vec();
        traj.controls
            .iter()
            .zip(&traj.states)
            .enumerate()
            .map(|(i, (u, x))| StepRecord {
                step: i,
                time: self.time.time(i),
                mean: mu.clone(),
                cov_diag: vec![0.0; mu.len()],
                control: u.to_vec(),
                state_norm: x.dot(x).sqrt(),
                stage_cost: self.model.cost.quadratic(&x.view()) + self.model.control_cost(&u.view()),
                updated: false,
                held: false,
                seconds: seconds.get(i).copied().unwrap_or(0.0),
            })
            .collect()
    }

    pub fn uncontrolled(&self) -> Result<Outcome, ExperimentError> {
        let dynamics = FullDynamics {
            model: &self.model,
            mu: self.mu_true(),
            newton: self.config.newton(),
        };
        let mut seconds = Vec::with_capacity(self.time.steps);
        let mut clock = Instant::now();
        let traj = simulate_trajectory(
            &dynamics,
            &self.x0,
            |i, _| {
                if i > 0 {
                    seconds.push(clock.elapsed().as_secs_f64());
                }
                clock = Instant::now();
                Ok(Array1::zeros(self.model.inputs()))
            },
            &self.time,
        )?;
        seconds.push(clock.elapsed().as_secs_f64());
        let cost = sdre_core::integrate::evaluate_cost(&traj, &self.model.cost, &self.model.control_weight, self.time.dt);
        Ok(Outcome {
            history: self.known_parameter_history(&traj, &seconds),
            trajectory: traj,
            cost,
            final_mean: None,
            contraction_violations: 0,
            held_steps: 0,
        })
    }

    /// Full-order SDRE with the true coefficients.
    pub fn sdre(&self) -> Result<Outcome, ExperimentError> {
        let run = run_sdre(&self.model, self.mu_true(), &self.x0, &self.time, &self.config.sdre_options())?;
        Ok(Outcome {
            history: self.known_parameter_history(&run.trajectory, &run.step_seconds),
            trajectory: run.trajectory,
            cost: run.cost,
            final_mean: None,
            contraction_violations: 0,
            held_steps: 0,
        })
    }

    pub fn snapshots(&self, strategy: StrategyName) -> Result<SnapshotSet, ExperimentError> {
        let known = self.config.known_mu();
        let grid = self.config.snapshots.grid();
        let req = SnapshotRequest {
            strategy: SnapshotStrategy::from(strategy),
            model: &self.model,
            mu: Some(&known),
            grid: &grid,
            plant: Some(&self.plant),
            x0: &self.x0,
            time: &self.time,
            stride: self.config.snapshots.stride,
            sdre: self.config.sdre_options(),
        };
        Ok(collect_snapshots(&req)?)
    }

    /// POD basis of size `pod`, DEIM bases per the configuration, and the reduced operators.
    pub fn reduce(&self, snapshots: SnapshotSet, pod: RankSelection) -> Result<OfflineProducts, ExperimentError> {
        let basis = compute_pod_basis(&snapshots.matrix, pod)?;
        let deim = DeimSetup::from_snapshots(
            &self.model,
            &snapshots.matrix,
            self.config.reduction.fidelity(),
            &self.config.known_mu(),
            self.config.reduction.deim_selection(),
        )?;
        let reduced = reduce_operators(&self.model, &basis, &deim)?;
        Ok(OfflineProducts {
            snapshots: Some(snapshots),
            pod: basis,
            deim,
            reduced,
        })
    }

    /// Offline phase with the configured strategy and sizes.
    pub fn offline(&self) -> Result<OfflineProducts, ExperimentError> {
        let snaps = self.snapshots(self.config.snapshots.strategy)?;
        self.reduce(snaps, self.config.reduction.pod_selection())
    }

    pub fn load_offline(&self, path: &Path) -> Result<OfflineProducts, ExperimentError> {
        let art = Artifact::read(path)?;
        let (pod, deim, reduced) = load_reduced(&art, &self.model)?;
        Ok(OfflineProducts {
            snapshots: None,
            pod,
            deim,
            reduced,
        })
    }

    /// Reduced SDRE with the true coefficients.
    pub fn reduced_sdre(&self, reduced: &ReducedModel) -> Result<ReducedRun, ExperimentError> {
        Ok(run_pod_deim_sdre(reduced, self.mu_true(), &self.x0, &self.time, &self.config.newton())?)
    }

    pub fn full_identification(&self, noise: NoiseSpec) -> Result<Outcome, ExperimentError> {
        let run = run_online_full(self.setup(noise)?, &self.plant, &self.config.sdre_options().solver)?;
        Ok(Outcome::from_online(run))
    }

    pub fn reduced_identification(&self, reduced: &ReducedModel, noise: NoiseSpec) -> Result<Outcome, ExperimentError> {
        let run = match self.config.solver.reduced_observation {
            ObservationName::Reduced => {
                let plant = Plant::new(ReducedDynamics {
                    model: reduced,
                    mu: self.mu_true(),
                    newton: self.config.newton(),
                });
                run_online_reduced(self.setup(noise)?, reduced, ReducedObservation::Reduced(&plant))?
            }
            ObservationName::FullProjected => {
                run_online_reduced(self.setup(noise)?, reduced, ReducedObservation::FullProjected(&self.plant))?
            }
        };
        Ok(Outcome::from_online(run))
    }

    pub fn run_algorithm(&self, alg: Algorithm, offline: Option<&OfflineProducts>) -> Result<Outcome, ExperimentError> {
        match alg {
            Algorithm::Uncontrolled => self.uncontrolled(),
            Algorithm::Sdre => self.sdre(),
            Algorithm::FullId => self.full_identification(self.config.noise()),
            Algorithm::ReducedId => {
                let products = offline.ok_or_else(|| {
                    ExperimentError::Config("reduced identification needs the offline products".into())
                })?;
                self.reduced_identification(&products.reduced, self.config.noise())
            }
        }
    }

    /// Algorithm-2 error against a full-order reference, for every strategy and requested size.
    ///
    /// Failures are recorded per point and the sweep continues. The second return value holds the
    /// wall-clock seconds of each point.
    pub fn sweep(
        &self,
        reference: &Outcome,
        strategies: &[StrategyName],
        sizes: &[RankSelection],
    ) -> (Vec<SweepPoint>, Vec<f64>) {
        let mut points = Vec::new();
        let mut seconds = Vec::new();
        if sizes.is_empty() {
            return (points, seconds);
        }
        for &strategy in strategies {
            let snaps = self.snapshots(strategy);
            for &size in sizes {
                let clock = Instant::now();
                let requested = match size {
                    RankSelection::Fixed(r) => r.to_string(),
                    RankSelection::Tolerance(_) => "rank".to_string(),
                };
                let outcome = snaps
                    .as_ref()
                    .map_err(|e| ExperimentError::Config(format!("snapshot generation failed: {e}")))
                    .and_then(|s| {
                        let products = self.reduce(s.clone(), size)?;
                        let run = self.reduced_sdre(&products.reduced)?;
                        Ok((products.pod.rank(), run))
                    });
                let point = match outcome {
                    Ok((rank, run)) => {
                        let m = error_metrics(&reference.trajectory, &run.lifted, reference.cost, run.cost);
                        SweepPoint {
                            strategy: strategy.label().to_string(),
                            requested,
                            pod_rank: rank,
                            state_error: Some(m.state_error),
                            cost_error: Some(m.cost_error),
                            relative_cost_error: Some(m.cost_error / reference.cost.abs().max(f64::MIN_POSITIVE)),
                            failure: None,
                        }
                    }
                    Err(e) => {
                        log::warn!("sweep point {} r={requested} failed: {e}", strategy.label());
                        SweepPoint {
                            strategy: strategy.label().to_string(),
                            requested,
                            pod_rank: 0,
                            state_error: None,
                            cost_error: None,
                            relative_cost_error: None,
                            failure: Some(e.to_string()),
                        }
                    }
                };
                points.push(point);
                seconds.push(clock.elapsed().as_secs_f64());
            }
        }
        (points, seconds)
    }

    fn blank_report(&self) -> RunReport {
        let c = &self.config;
        RunReport {
            version: REPORT_VERSION,
            name: c.name.clone(),
            problem: match c.problem {
                crate::config::Problem::AllenCahn => "allen-cahn".into(),
                crate::config::Problem::Advection => "advection".into(),
            },
            grid: [c.grid.n1, c.grid.n2],
            dim: self.model.dim(),
            dt: self.time.dt,
            steps: self.time.steps,
            mu_true: c.model.mu_true.clone(),
            prior_mean: c.prior.mean.clone(),
            prior_scale: c.prior.scale,
            domain: c.model.domain.clone(),
            sigma_hat: c.noise.sigma_hat,
            seed: c.noise.seed,
            offline: None,
            runs: Vec::new(),
            sweep: Vec::new(),
            failures: Vec::new(),
        }
    }
}

/// What [`execute`] runs.
#[derive(Debug, Clone, Default)]
pub struct RunPlan {
    pub algorithms: Vec<Algorithm>,
    /// Build the offline products even when no requested algorithm needs them.
    pub offline: bool,
    /// Load the reduced model from this artifact instead of building it.
    pub basis: Option<PathBuf>,
}

impl RunPlan {
    pub fn everything() -> Self {
        RunPlan {
            algorithms: Algorithm::ALL.to_vec(),
            offline: true,
            basis: None,
        }
    }
}

fn write_report(dir: &Path, report: &RunReport, timings: &TimingReport) -> Result<(), ExperimentError> {
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    fs::write(dir.join("timings.json"), serde_json::to_string_pretty(timings)? + "\n")?;
    Ok(())
}

/// Offline phase followed by every requested algorithm; writes `report.json`, `timings.json`,
/// `basis.bin` and `<algorithm>/steps.csv` under the configured output directory.
///
/// Stage failures are recorded in the report rather than returned.
pub fn execute(config: &ExperimentConfig, plan: &RunPlan) -> Result<RunReport, ExperimentError> {
    let exp = Experiment::new(config.clone())?;
    let dir = config.output_dir();
    fs::create_dir_all(&dir)?;
    let mut report = exp.blank_report();
    let mut timings = TimingReport::default();

    let needs_offline = plan.offline || plan.algorithms.contains(&Algorithm::ReducedId);
    let mut offline = None;
    if needs_offline {
        let clock = Instant::now();
        let built = match &plan.basis {
            Some(path) => exp.load_offline(path),
            None => exp.offline(),
        };
        timings.push("offline", clock.elapsed().as_secs_f64());
        match built {
            Ok(products) => {
                let basis_file = match &plan.basis {
                    Some(path) => path.display().to_string(),
                    None => {
                        products.artifact().write(&dir.join("basis.bin"))?;
                        "basis.bin".to_string()
                    }
                };
                report.offline = Some(OfflineSummary {
                    strategy: config.snapshots.strategy.label().to_string(),
                    snapshot_columns: products.snapshots.as_ref().map_or(0, SnapshotSet::columns),
                    parameter_grid: products.snapshots.as_ref().map_or_else(Vec::new, |s| s.parameter_grid.clone()),
                    rejected: products.snapshots.as_ref().map_or_else(Vec::new, |s| s.rejected.clone()),
                    pod_rank: products.pod.rank(),
                    deim_sizes: products.deim_sizes(),
                    basis_file,
                });
                offline = Some(products);
            }
            Err(e) => report.failures.push(format!("offline: {e}")),
        }
    }

    for &alg in &plan.algorithms {
        let label = alg.label();
        if alg == Algorithm::ReducedId && offline.is_none() {
            report.runs.push(RunSummary::failed(label, "offline phase failed".into()));
            continue;
        }
        let clock = Instant::now();
        let result = exp.run_algorithm(alg, offline.as_ref());
        timings.push(label, clock.elapsed().as_secs_f64());
        match result {
            Ok(outcome) => {
                let run_dir = dir.join(label);
                fs::create_dir_all(&run_dir)?;
                write_steps_csv(fs::File::create(run_dir.join("steps.csv"))?, &outcome.history)?;
                report.runs.push(RunSummary {
                    algorithm: label.to_string(),
                    failure: None,
                    cost: Some(outcome.cost),
                    relative_error: outcome.final_mean.as_ref().map(|m| relative_errors(m, exp.mu_true())),
                    final_mean: outcome.final_mean.clone(),
                    terminal_inf_norm: Some(outcome.terminal_inf_norm()),
                    contraction_violations: Some(outcome.contraction_violations),
                    held_steps: Some(outcome.held_steps),
                    steps_csv: Some(format!("{label}/steps.csv")),
                });
            }
            Err(e) => {
                log::error!("{label} failed: {e}");
                report.runs.push(RunSummary::failed(label, e.to_string()));
            }
        }
    }
    write_report(&dir, &report, &timings)?;
    Ok(report)
}

/// All four algorithms after the offline phase.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport, ExperimentError> {
    execute(config, &RunPlan::everything())
}

/// Algorithm-2 error curves for every snapshot strategy; writes `sweep.csv` and `report.json`.
pub fn sweep_pod_error(config: &ExperimentConfig, sizes: &[RankSelection]) -> Result<RunReport, ExperimentError> {
    let exp = Experiment::new(config.clone())?;
    let dir = config.output_dir();
    fs::create_dir_all(&dir)?;
    let mut report = exp.blank_report();
    let mut timings = TimingReport::default();
    let mut seconds = Vec::new();
    if !sizes.is_empty() {
        let clock = Instant::now();
        match exp.sdre() {
            Ok(reference) => {
                timings.push("sdre", clock.elapsed().as_secs_f64());
                let (points, secs) = exp.sweep(&reference, &StrategyName::ALL, sizes);
                report.sweep = points;
                seconds = secs;
            }
            Err(e) => report.failures.push(format!("reference run: {e}")),
        }
    }
    for (p, s) in report.sweep.iter().zip(&seconds) {
        timings.push(format!("sweep {} r={}", p.strategy, p.requested), *s);
    }
    write_sweep_csv(fs::File::create(dir.join("sweep.csv"))?, &report.sweep, &seconds)?;
    write_report(&dir, &report, &timings)?;
    Ok(report)
}
