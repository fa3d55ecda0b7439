//! Online coefficient identification by Bayesian linear regression inside the SDRE loop.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis, OwnedRepr};
use ndarray_linalg::cholesky::CholeskyFactorized;
use ndarray_linalg::{EigVals, FactorizeC, InverseC, SolveC, UPLO};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::integrate::{evaluate_cost, Dynamics, TimeGrid, Trajectory};
use crate::linalg::symmetrize;
use crate::pde::SemilinearModel;
use crate::riccati::{solve_are_dense, AreProblem, FullOrderSolver, SolverOptions};
use crate::rom::ReducedModel;

/// Gaussian belief `N(mean, cov)` over the coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPosterior {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

impl ParameterPosterior {
    /// `N(mean, scale·I)`.
    pub fn isotropic(mean: Array1<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidInput("prior scale must be positive".into()));
        }
        let n = mean.len();
        Ok(ParameterPosterior {
            mean,
            cov: Array2::eye(n) * scale,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateRule {
    /// Update every step until the mean moves less than `tol_mu`, then stop updating.
    #[default]
    FreezeAfterConvergence,
    /// Update at step `i` only if `‖μ̃ⁱ − μ̃ⁱ⁻¹‖_∞ < tol_mu`, with `μ̃⁻¹ = μ̃⁰`.
    GatedOnSmallStep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlrConfig {
    pub sigma2: f64,
    pub tol_mu: f64,
    pub update_rule: UpdateRule,
    pub prior_scale: f64,
}

impl Default for BlrConfig {
    fn default() -> Self {
        BlrConfig {
            sigma2: 1.0,
            tol_mu: 1e-4,
            update_rule: UpdateRule::FreezeAfterConvergence,
            prior_scale: 1e6,
        }
    }
}

impl BlrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) || !(self.tol_mu >= 0.0) || !(self.prior_scale > 0.0) {
            return Err(Error::InvalidInput(
                "BLR needs sigma2 > 0, tol_mu >= 0 and a positive prior scale".into(),
            ));
        }
        Ok(())
    }
}

/// Relative Gaussian perturbation of the regression matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseSpec {
    pub sigma_hat: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        NoiseSpec::default()
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// `X = [Aⱼ(x⁺)x⁺]ⱼ` and `Y = (x⁺ − x)/dt − Bu`.
pub fn assemble_regression(
    model: &SemilinearModel,
    x_prev: &Array1<f64>,
    x_next: &Array1<f64>,
    u: &Array1<f64>,
    dt: f64,
) -> (Array2<f64>, Array1<f64>) {
    let x = model.term_columns(x_next);
    let y = (x_next - x_prev) / dt - model.actuator.dot(u);
    (x, y)
}

/// Adds `N(0, (σ̂·mⱼ)²)` to column `j`, where `mⱼ` is the mean absolute entry of the column.
pub fn inject_noise(x: &Array2<f64>, sigma_hat: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut out = x.clone();
    if sigma_hat == 0.0 {
        return out;
    }
    for mut col in out.axis_iter_mut(Axis(1)) {
        let scale = sigma_hat * col.iter().map(|v| v.abs()).sum::<f64>() / col.len().max(1) as f64;
        if !(scale > 0.0) {
            continue;
        }
        let normal = Normal::new(0.0, scale).expect("finite positive standard deviation");
        for v in col.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    out
}

/// Conjugate update `Σ⁺ = (XᵀX/σ² + Σ⁻¹)⁻¹`, `μ⁺ = Σ⁺(XᵀY/σ² + Σ⁻¹μ)`.
pub fn blr_update(
    post: &ParameterPosterior,
    x: &Array2<f64>,
    y: &Array1<f64>,
    sigma2: f64,
) -> Result<ParameterPosterior> {
    let prior_precision = factor_spd(&post.cov)?.invc()?;
    let precision = x.t().dot(x) / sigma2 + &prior_precision;
    let rhs = x.t().dot(y) / sigma2 + prior_precision.dot(&post.mean);
    let chol = factor_spd(&precision)?;
    let mean = chol.solvec(&rhs)?;
    let cov = symmetrize(&chol.invc()?);
    factor_spd(&cov)?;
    Ok(ParameterPosterior { mean, cov })
}

/// Cholesky factorization, retrying once on the symmetrized matrix.
fn factor_spd(a: &Array2<f64>) -> Result<CholeskyFactorized<OwnedRepr<f64>>> {
    a.factorizec(UPLO::Lower)
        .or_else(|_| symmetrize(a).factorizec(UPLO::Lower))
        .map_err(|e| Error::Posterior(e.to_string()))
}

/// Largest eigenvalue of `Σ⁺ − Σ`; non-positive when the covariance contracted.
pub fn covariance_growth(before: &Array2<f64>, after: &Array2<f64>) -> Result<f64> {
    let diff = symmetrize(&(after - before));
    let vals = diff.eigvals()?;
    Ok(vals.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// One row of the per-step log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub mean: Vec<f64>,
    pub cov_diag: Vec<f64>,
    pub control: Vec<f64>,
    pub state_norm: f64,
    pub stage_cost: f64,
    pub updated: bool,
    /// The ARE had no stabilizing solution and the previous gain was reused.
    pub held: bool,
    pub seconds: f64,
}

pub const STEPS_CSV_VERSION: u32 = 1;

/// Writes the per-step log: a `# steps-csv v<N>` comment line, a header, then one row per step.
pub fn write_steps_csv<W: Write>(mut out: W, records: &[StepRecord]) -> std::io::Result<()> {
    let n = records.first().map_or(0, |r| r.mean.len());
    let m = records.first().map_or(0, |r| r.control.len());
    writeln!(out, "# steps-csv v{STEPS_CSV_VERSION}")?;
    let mut header = vec!["step".to_string(), "time".to_string()];
    header.extend((1..=n).map(|j| format!("mu{j}")));
    header.extend((1..=n).map(|j| format!("var{j}")));
    header.extend((1..=m).map(|j| format!("u{j}")));
    header.extend(["state_norm", "stage_cost", "updated", "held", "seconds"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![r.step.to_string(), format!("{:.6}", r.time)];
        row.extend(r.mean.iter().map(|v| format!("{v:.12e}")));
        row.extend(r.cov_diag.iter().map(|v| format!("{v:.6e}")));
        row.extend(r.control.iter().map(|v| format!("{v:.12e}")));
        row.push(format!("{:.12e}", r.state_norm));
        row.push(format!("{:.12e}", r.stage_cost));
        row.push(u8::from(r.updated).to_string());
        row.push(u8::from(r.held).to_string());
        row.push(format!("{:.6e}", r.seconds));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Result of an online identification-and-control run.
#[derive(Debug, Clone)]
pub struct OnlineRun {
    /// Full-dimensional states (lifted for the reduced loop).
    pub trajectory: Trajectory,
    pub reduced: Option<Trajectory>,
    pub posterior: ParameterPosterior,
    pub history: Vec<StepRecord>,
    pub cost: f64,
    /// Updates where `Σ⁺ ⪯ Σ` failed beyond rounding.
    pub contraction_violations: usize,
    /// Steps that reused the previous gain under [`AreFailurePolicy::HoldLastGain`].
    pub held_steps: usize,
}

impl OnlineRun {
    pub fn final_mean(&self) -> &Array1<f64> {
        &self.posterior.mean
    }

    pub fn online_seconds(&self) -> f64 {
        self.history.iter().map(|r| r.seconds).sum()
    }
}

/// Posterior bookkeeping shared by both online loops.
struct Estimator<'a> {
    blr: &'a BlrConfig,
    posterior: ParameterPosterior,
    before_previous: Array1<f64>,
    frozen: bool,
    noise: f64,
    rng: ChaCha8Rng,
    violations: usize,
}

impl<'a> Estimator<'a> {
    fn new(blr: &'a BlrConfig, prior: ParameterPosterior, noise: &NoiseSpec) -> Result<Self> {
        blr.validate()?;
        if !(noise.sigma_hat >= 0.0) {
            return Err(Error::InvalidInput("noise level must be non-negative".into()));
        }
        Ok(Estimator {
            blr,
            before_previous: prior.mean.clone(),
            posterior: prior,
            frozen: false,
            noise: noise.sigma_hat,
            rng: noise.rng(),
            violations: 0,
        })
    }

    fn mean(&self) -> Vec<f64> {
        self.posterior.mean.to_vec()
    }

    fn observe(&mut self, x: &Array2<f64>, y: &Array1<f64>) -> Result<bool> {
        let x = inject_noise(x, self.noise, &mut self.rng);
        let current = self.posterior.mean.clone();
        let update = match self.blr.update_rule {
            UpdateRule::FreezeAfterConvergence => !self.frozen,
            UpdateRule::GatedOnSmallStep => inf_dist(&current, &self.before_previous) < self.blr.tol_mu,
        };
        self.before_previous = current.clone();
        if !update {
            return Ok(false);
        }
        let next = blr_update(&self.posterior, &x, y, self.blr.sigma2)?;
        let growth = covariance_growth(&self.posterior.cov, &next.cov)?;
        let scale = self.posterior.cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if growth > 1e-10 * scale {
            self.violations += 1;
        }
        if self.blr.update_rule == UpdateRule::FreezeAfterConvergence
            && inf_dist(&next.mean, &current) < self.blr.tol_mu
        {
            self.frozen = true;
        }
        self.posterior = next;
        Ok(true)
    }
}

fn history_held(history: &[StepRecord]) -> usize {
    history.iter().filter(|r| r.held).count()
}

fn inf_dist(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// What the online loops do when the ARE at the current estimate has no stabilizing solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AreFailurePolicy {
    /// Stop the run with the step index.
    #[default]
    Abort,
    /// Reuse the most recent gain; before the first successful solve apply `u = 0`.
    HoldLastGain,
}

/// Solves for the control at step `i`, applying the failure policy. Returns the control and
/// whether the previous gain was held.
fn control_or_hold(
    policy: AreFailurePolicy,
    i: usize,
    x: &Array1<f64>,
    inputs: usize,
    last: &mut Option<Array2<f64>>,
    solve: impl FnOnce() -> Result<Array2<f64>>,
) -> Result<(Array1<f64>, bool)> {
    match solve() {
        Ok(k) => {
            let u = -k.dot(x);
            *last = Some(k);
            Ok((u, false))
        }
        Err(e) if policy == AreFailurePolicy::HoldLastGain && e.is_numerical() => {
            log::warn!("step {i}: holding the previous gain ({e})");
            let u = last.as_ref().map_or_else(|| Array1::zeros(inputs), |k| -k.dot(x));
            Ok((u, true))
        }
        Err(e) => Err(e.at_step(i)),
    }
}

pub struct OnlineSetup<'a> {
    /// Operator library with actuator and cost; its true coefficients are unknown.
    pub model: &'a SemilinearModel,
    pub x0: &'a Array1<f64>,
    pub time: &'a TimeGrid,
    pub prior: ParameterPosterior,
    pub blr: BlrConfig,
    pub noise: NoiseSpec,
    pub on_are_failure: AreFailurePolicy,
}

/// Full-order loop: ARE at the current estimate, observe the plant, update the posterior.
pub fn run_online_full(
    setup: OnlineSetup,
    plant: &dyn Dynamics,
    solver: &SolverOptions,
) -> Result<OnlineRun> {
    let model = setup.model;
    let grid = setup.time;
    let mut estimator = Estimator::new(&setup.blr, setup.prior, &setup.noise)?;
    let mut are = FullOrderSolver::new(*solver);
    let mut traj = Trajectory {
        states: vec![setup.x0.clone()],
        controls: Vec::with_capacity(grid.steps),
    };
    let mut history = Vec::with_capacity(grid.steps);
    let mut last_gain = None;
    for i in 0..grid.steps {
        let clock = Instant::now();
        let x = traj.states[i].clone();
        let mu = estimator.mean();
        let (u, held) = if i == 0 {
            (Array1::zeros(model.inputs()), false)
        } else {
            control_or_hold(setup.on_are_failure, i, &x, model.inputs(), &mut last_gain, || {
                let a = model.operator(&x, &mu);
                Ok(are.solve(&a, &model.actuator, &model.cost, &model.control_weight)?.k)
            })?
        };
        let next = plant.step(&x, &u, grid.dt).map_err(|e| e.at_step(i))?;
        let (xr, yr) = assemble_regression(model, &x, &next, &u, grid.dt);
        let updated = estimator.observe(&xr, &yr).map_err(|e| e.at_step(i))?;
        let seconds = clock.elapsed().as_secs_f64();
        let stage = model.cost.quadratic(&x.view()) + model.control_cost(&u.view());
        history.push(record(i, grid, &estimator, &u, &x, stage, (updated, held), seconds));
        traj.controls.push(u);
        traj.states.push(next);
    }
    let cost = evaluate_cost(&traj, &model.cost, &model.control_weight, grid.dt);
    warn_outside(&estimator.posterior.mean);
    Ok(OnlineRun {
        trajectory: traj,
        reduced: None,
        posterior: estimator.posterior,
        cost,
        contraction_violations: estimator.violations,
        held_steps: history_held(&history),
        history,
    })
}

#[allow(clippy::too_many_arguments)]
fn record(
    i: usize,
    grid: &TimeGrid,
    est: &Estimator,
    u: &Array1<f64>,
    x: &Array1<f64>,
    stage: f64,
    (updated, held): (bool, bool),
    seconds: f64,
) -> StepRecord {
    StepRecord {
        step: i,
        time: grid.time(i),
        mean: est.posterior.mean.to_vec(),
        cov_diag: est.posterior.cov.diag().to_vec(),
        control: u.to_vec(),
        state_norm: x.dot(x).sqrt(),
        stage_cost: stage,
        updated,
        held,
        seconds,
    }
}

fn warn_outside(mean: &Array1<f64>) {
    if mean.iter().any(|v| !v.is_finite()) {
        log::warn!("parameter estimate is not finite: {mean}");
    }
}

/// What the reduced loop observes.
pub enum ReducedObservation<'a> {
    /// The reduced dynamics under the true coefficients (state is `x_r`).
    Reduced(&'a dyn Dynamics),
    /// The full plant; its state is projected with `Ψᵀ`.
    FullProjected(&'a dyn Dynamics),
}

/// Reduced loop: `r × r` ARE at the current estimate, reduced observation, full-size regression
/// on the lifted states.
pub fn run_online_reduced(
    setup: OnlineSetup,
    reduced: &ReducedModel,
    observation: ReducedObservation,
) -> Result<OnlineRun> {
    let model = setup.model;
    let grid = setup.time;
    let mut estimator = Estimator::new(&setup.blr, setup.prior, &setup.noise)?;
    let mut full_state = setup.x0.clone();
    let mut x_r = reduced.project(setup.x0);
    let mut red = Trajectory {
        states: vec![x_r.clone()],
        controls: Vec::with_capacity(grid.steps),
    };
    let mut lifted_prev = reduced.lift(&x_r);
    let mut lifted = Trajectory {
        states: vec![lifted_prev.clone()],
        controls: Vec::with_capacity(grid.steps),
    };
    let mut history = Vec::with_capacity(grid.steps);
    let mut last_gain = None;
    let inputs = reduced.actuator.ncols();
    for i in 0..grid.steps {
        let clock = Instant::now();
        let mu = estimator.mean();
        let (u, held) = if i == 0 {
            (Array1::zeros(inputs), false)
        } else {
            control_or_hold(setup.on_are_failure, i, &x_r, inputs, &mut last_gain, || {
                let p = AreProblem::new(
                    reduced.operator(&x_r, &mu),
                    reduced.actuator.clone(),
                    reduced.cost.clone(),
                    reduced.control_weight.clone(),
                )?;
                Ok(solve_are_dense(&p)?.k)
            })?
        };
        let next_r = match &observation {
            ReducedObservation::Reduced(plant) => plant.step(&x_r, &u, grid.dt).map_err(|e| e.at_step(i))?,
            ReducedObservation::FullProjected(plant) => {
                full_state = plant.step(&full_state, &u, grid.dt).map_err(|e| e.at_step(i))?;
                reduced.project(&full_state)
            }
        };
        let lifted_next = reduced.lift(&next_r);
        let (xr, yr) = assemble_regression(model, &lifted_prev, &lifted_next, &u, grid.dt);
        let updated = estimator.observe(&xr, &yr).map_err(|e| e.at_step(i))?;
        let seconds = clock.elapsed().as_secs_f64();
        let stage = x_r.dot(&reduced.cost.dot(&x_r)) + u.dot(&reduced.control_weight.dot(&u));
        history.push(record(i, grid, &estimator, &u, &lifted_prev, stage, (updated, held), seconds));
        red.controls.push(u.clone());
        red.states.push(next_r.clone());
        lifted.controls.push(u);
        lifted.states.push(lifted_next.clone());
        x_r = next_r;
        lifted_prev = lifted_next;
    }
    let cost = evaluate_cost(&red, &reduced.cost, &reduced.control_weight, grid.dt);
    warn_outside(&estimator.posterior.mean);
    Ok(OnlineRun {
        trajectory: lifted,
        reduced: Some(red),
        posterior: estimator.posterior,
        cost,
        contraction_violations: estimator.violations,
        held_steps: history_held(&history),
        history,
    })
}
