//! Implicit Euler time stepping under piecewise-constant control.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::linalg::BandLu;
use crate::pde::{LowRankCost, SemilinearModel};

/// Uniform time grid `t_i = t0 + i·dt`, `i = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || steps == 0 {
            return Err(Error::InvalidInput(format!(
                "time grid needs dt > 0 and at least one step (dt = {dt}, steps = {steps})"
            )));
        }
        Ok(TimeGrid { t0, dt, steps })
    }

    /// Grid on `[0, horizon]` with `round(horizon / dt)` steps.
    pub fn with_horizon(dt: f64, horizon: f64) -> Result<Self> {
        if !(dt > 0.0) || !(horizon > 0.0) {
            return Err(Error::InvalidInput("dt and horizon must be positive".into()));
        }
        Self::new(0.0, dt, (horizon / dt).round() as usize)
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }
}

/// States `x(t_0..=t_n)` and the controls held on each interval.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Array1<f64>>,
    pub controls: Vec<Array1<f64>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn final_state(&self) -> &Array1<f64> {
        self.states.last().expect("trajectory has an initial state")
    }

    /// Snapshot matrix `[x(t_0), …, x(t_{n−1})]` (the state at each control interval start).
    pub fn snapshot_matrix(&self) -> Array2<f64> {
        let d = self.states[0].len();
        let n = self.steps().max(1).min(self.states.len());
        let mut s = Array2::zeros((d, n));
        for (i, x) in self.states.iter().take(n).enumerate() {
            s.column_mut(i).assign(x);
        }
        s
    }

    /// Maps every state through `f` (lifting, projection), keeping the controls.
    pub fn map_states(&self, f: impl Fn(&Array1<f64>) -> Array1<f64>) -> Trajectory {
        Trajectory {
            states: self.states.iter().map(f).collect(),
            controls: self.controls.clone(),
        }
    }
}

/// Newton stopping rule for the implicit stage equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Relative residual tolerance; the absolute bound is `tol·(1 + ‖x‖)`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iters: 50,
        }
    }
}

/// One implicit Euler step: solves `y − dt·(A(y;μ)y + Bu) = x` by Newton with banded LU.
pub fn implicit_euler_step(
    model: &SemilinearModel,
    mu: &[f64],
    x: &Array1<f64>,
    u: &Array1<f64>,
    dt: f64,
    opts: &NewtonOptions,
) -> Result<Array1<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    let forcing = x + &(model.actuator.dot(u) * dt);
    let bound = opts.tol * (1.0 + norm(&x.view()));
    let stage_residual = |y: &Array1<f64>| y - &(model.drift(y, mu) * dt) - &forcing;
    let mut y = x.clone();
    let mut residual = stage_residual(&y);
    let mut res_norm = norm(&residual.view());
    for _ in 0..opts.max_iters {
        if res_norm <= bound {
            return Ok(y);
        }
        let jac = model.jacobian(&y, mu).map(|v| -dt * v);
        let lu = BandLu::factor(&jac, 1.0)?;
        let delta = lu.solve_vec(false, &residual)?;
        y -= &delta;
        residual = stage_residual(&y);
        res_norm = norm(&residual.view());
    }
    if res_norm <= bound {
        return Ok(y);
    }
    Err(Error::NewtonDiverged {
        iterations: opts.max_iters,
        residual: res_norm,
    })
}

/// Implicit Euler step with the feedback inside the stage: solves
/// `y − dt·(A(y;μ)y − BKy) = x`. The rank-`m` feedback term is handled by
/// Sherman–Morrison–Woodbury on top of the banded Jacobian factorization.
pub fn implicit_euler_feedback_step(
    model: &SemilinearModel,
    mu: &[f64],
    x: &Array1<f64>,
    gain: &Array2<f64>,
    dt: f64,
    opts: &NewtonOptions,
) -> Result<Array1<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    let b = &model.actuator;
    let bound = opts.tol * (1.0 + norm(&x.view()));
    let stage_residual =
        |y: &Array1<f64>| y - &(&model.drift(y, mu) - &b.dot(&gain.dot(y))) * dt - x;
    let m = b.ncols();
    let mut y = x.clone();
    let mut residual = stage_residual(&y);
    let mut res_norm = norm(&residual.view());
    for _ in 0..opts.max_iters {
        if res_norm <= bound {
            return Ok(y);
        }
        let jac = model.jacobian(&y, mu).map(|v| -dt * v);
        let lu = BandLu::factor(&jac, 1.0)?;
        let scaled_b = b * dt;
        let mb = lu.solve_mat(false, &scaled_b.view())?;
        let mr = lu.solve_vec(false, &residual)?;
        let cap = Array2::<f64>::eye(m) + gain.dot(&mb);
        let (coef, _) = crate::linalg::solve_dense(&cap, &gain.dot(&mr).insert_axis(ndarray::Axis(1)).view())?;
        let delta = &mr - &mb.dot(&coef.column(0));
        y -= &delta;
        residual = stage_residual(&y);
        res_norm = norm(&residual.view());
    }
    if res_norm <= bound {
        return Ok(y);
    }
    Err(Error::NewtonDiverged {
        iterations: opts.max_iters,
        residual: res_norm,
    })
}

pub(crate) fn norm(x: &ArrayView1<f64>) -> f64 {
    x.dot(x).sqrt()
}

/// Anything that advances a state over one interval under a held control.
pub trait Dynamics {
    fn dim(&self) -> usize;
    fn step(&self, x: &Array1<f64>, u: &Array1<f64>, dt: f64) -> Result<Array1<f64>>;
}

/// Full-order dynamics at a known parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct FullDynamics<'a> {
    pub model: &'a SemilinearModel,
    pub mu: &'a [f64],
    pub newton: NewtonOptions,
}

impl Dynamics for FullDynamics<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn step(&self, x: &Array1<f64>, u: &Array1<f64>, dt: f64) -> Result<Array1<f64>> {
        implicit_euler_step(self.model, self.mu, x, u, dt, &self.newton)
    }
}

/// Black-box plant: dynamics whose true parameters cannot be read back.
pub struct Plant<D> {
    dynamics: D,
}

impl<D: Dynamics> Plant<D> {
    pub fn new(dynamics: D) -> Self {
        Plant { dynamics }
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    /// State at `t_{i+1}` reached from `x` at `t_i` under the held control `u`.
    pub fn observe(&self, x: &Array1<f64>, u: &Array1<f64>, dt: f64) -> Result<Array1<f64>> {
        self.dynamics.step(x, u, dt)
    }
}

impl<D: Dynamics> Dynamics for Plant<D> {
    fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    fn step(&self, x: &Array1<f64>, u: &Array1<f64>, dt: f64) -> Result<Array1<f64>> {
        self.dynamics.step(x, u, dt)
    }
}

/// Full-order plant owning its model and hidden parameters.
pub struct FullPlant {
    model: SemilinearModel,
    hidden: Vec<f64>,
    newton: NewtonOptions,
}

impl FullPlant {
    pub fn new(model: SemilinearModel, mu_true: Vec<f64>, newton: NewtonOptions) -> Plant<FullPlant> {
        Plant::new(FullPlant {
            model,
            hidden: mu_true,
            newton,
        })
    }
}

impl Dynamics for FullPlant {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn step(&self, x: &Array1<f64>, u: &Array1<f64>, dt: f64) -> Result<Array1<f64>> {
        implicit_euler_step(&self.model, &self.hidden, x, u, dt, &self.newton)
    }
}

/// Rolls out `dynamics` from `x0`; `policy(i, x_i)` gives the control held on `[t_i, t_{i+1})`.
pub fn simulate_trajectory<D, P>(
    dynamics: &D,
    x0: &Array1<f64>,
    mut policy: P,
    grid: &TimeGrid,
) -> Result<Trajectory>
where
    D: Dynamics + ?Sized,
    P: FnMut(usize, &Array1<f64>) -> Result<Array1<f64>>,
{
    let mut traj = Trajectory {
        states: Vec::with_capacity(grid.steps + 1),
        controls: Vec::with_capacity(grid.steps),
    };
    traj.states.push(x0.clone());
    for i in 0..grid.steps {
        let x = &traj.states[i];
        let u = policy(i, x)?;
        let next = dynamics.step(x, &u, grid.dt).map_err(|e| e.at_step(i))?;
        traj.controls.push(u);
        traj.states.push(next);
    }
    Ok(traj)
}

/// State weight usable by [`evaluate_cost`].
pub trait QuadraticWeight {
    fn quadratic(&self, x: &ArrayView1<f64>) -> f64;
}

impl QuadraticWeight for LowRankCost {
    fn quadratic(&self, x: &ArrayView1<f64>) -> f64 {
        LowRankCost::quadratic(self, x)
    }
}

impl QuadraticWeight for Array2<f64> {
    fn quadratic(&self, x: &ArrayView1<f64>) -> f64 {
        x.dot(&self.dot(x))
    }
}

/// Left-endpoint quadrature `Σᵢ (xᵢᵀQxᵢ + uᵢᵀRuᵢ)·dt`.
pub fn evaluate_cost<W: QuadraticWeight + ?Sized>(
    traj: &Trajectory,
    state_weight: &W,
    control_weight: &Array2<f64>,
    dt: f64,
) -> f64 {
    traj.controls
        .iter()
        .zip(&traj.states)
        .map(|(u, x)| state_weight.quadratic(&x.view()) + u.dot(&control_weight.dot(u)))
        .sum::<f64>()
        * dt
}
