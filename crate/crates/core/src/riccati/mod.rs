//! Algebraic Riccati solvers, LQR gains and the full-order SDRE loop.

mod dense;
mod lowrank;
mod stabilize;

use std::time::Instant;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Cholesky, UPLO};
use sprs::CsMat;

pub use dense::{
    care_residual, newton_kleinman, residual_tolerance, solve_are_dense, solve_lyapunov_dense,
    NewtonKleinmanRun,
};
pub use lowrank::{
    low_rank_care_residual, solve_are_low_rank, LowRankOptions, LowRankSolve, SparseAreProblem,
};
pub use stabilize::{stabilizing_gain, StabilizeOptions};

use crate::error::{Error, Result};
use crate::integrate::{
    evaluate_cost, implicit_euler_feedback_step, simulate_trajectory, FullDynamics, NewtonOptions,
    TimeGrid, Trajectory,
};
use crate::linalg::{asymmetry, sparse_to_dense};
use crate::pde::{LowRankCost, SemilinearModel};

/// Dense ARE instance `AᵀΠ + ΠA − ΠBR⁻¹BᵀΠ + Q = 0`.
#[derive(Debug, Clone)]
pub struct AreProblem {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub q: Array2<f64>,
    pub r: Array2<f64>,
}

impl AreProblem {
    pub fn new(a: Array2<f64>, b: Array2<f64>, q: Array2<f64>, r: Array2<f64>) -> Result<Self> {
        let k = a.nrows();
        let m = b.ncols();
        if a.ncols() != k || b.nrows() != k || q.dim() != (k, k) || r.dim() != (m, m) {
            return Err(Error::InvalidInput(format!(
                "ARE dimensions inconsistent: A {:?}, B {:?}, Q {:?}, R {:?}",
                a.dim(),
                b.dim(),
                q.dim(),
                r.dim()
            )));
        }
        if asymmetry(&q.view()) > 1e-12 {
            return Err(Error::InvalidInput("Q is not symmetric".into()));
        }
        if asymmetry(&r.view()) > 1e-12 {
            return Err(Error::InvalidInput("R is not symmetric".into()));
        }
        if m > 0 && r.cholesky(UPLO::Lower).is_err() {
            return Err(Error::InvalidInput("R is not positive definite".into()));
        }
        Ok(AreProblem { a, b, q, r })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Riccati solution, dense or as a low-rank factor `Π = ZZᵀ`.
#[derive(Debug, Clone)]
pub enum RiccatiSolution {
    Dense(Array2<f64>),
    LowRank(Array2<f64>),
}

impl RiccatiSolution {
    pub fn dense(&self) -> Array2<f64> {
        match self {
            RiccatiSolution::Dense(p) => p.clone(),
            RiccatiSolution::LowRank(z) => z.dot(&z.t()),
        }
    }
}

/// Feedback `u = −Kx` with `K = R⁻¹BᵀΠ`.
#[derive(Debug, Clone)]
pub struct FeedbackGain {
    /// `m × k`
    pub k: Array2<f64>,
    pub pi: RiccatiSolution,
}

impl FeedbackGain {
    pub fn control(&self, x: &Array1<f64>) -> Array1<f64> {
        -self.k.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Problems up to this size go to the dense Hamiltonian solver.
    pub dense_threshold: usize,
    pub low_rank: LowRankOptions,
    pub stabilize: StabilizeOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            dense_threshold: 200,
            low_rank: LowRankOptions::default(),
            stabilize: StabilizeOptions::default(),
        }
    }
}

/// Full-order ARE solver that keeps the previous gain as a warm start.
#[derive(Debug, Clone)]
pub struct FullOrderSolver {
    opts: SolverOptions,
    warm: Option<Array2<f64>>,
    pub cold_starts: usize,
}

impl FullOrderSolver {
    pub fn new(opts: SolverOptions) -> Self {
        FullOrderSolver {
            opts,
            warm: None,
            cold_starts: 0,
        }
    }

    pub fn solve(
        &mut self,
        a: &CsMat<f64>,
        b: &Array2<f64>,
        cost: &LowRankCost,
        r: &Array2<f64>,
    ) -> Result<FeedbackGain> {
        if a.rows() <= self.opts.dense_threshold {
            let p = AreProblem::new(sparse_to_dense(a), b.clone(), cost.dense(), r.clone())?;
            return solve_are_dense(&p);
        }
        let p = SparseAreProblem { a, b, cost, r };
        let attempt = match &self.warm {
            Some(k0) => solve_are_low_rank(&p, k0, &self.opts.low_rank),
            None => Err(Error::UnstableInitialGain("no previous gain".into())),
        };
        let solved = match attempt {
            Ok(s) => s,
            Err(Error::UnstableInitialGain(_)) | Err(Error::NoStabilizingSolution(_)) => {
                self.cold_starts += 1;
                let k0 = stabilizing_gain(a, b, cost, r, &self.opts.stabilize)?;
                solve_are_low_rank(&p, &k0, &self.opts.low_rank)?
            }
            Err(e) => return Err(e),
        };
        let (k, z) = (solved.gain, solved.factor);
        self.warm = Some(k.clone());
        Ok(FeedbackGain {
            k,
            pi: RiccatiSolution::LowRank(z),
        })
    }
}

/// LQR gain for the state-independent linear model.
pub fn lqr_gain(
    a_lin: &CsMat<f64>,
    b: &Array2<f64>,
    cost: &LowRankCost,
    r: &Array2<f64>,
    opts: &SolverOptions,
) -> Result<FeedbackGain> {
    FullOrderSolver::new(*opts).solve(a_lin, b, cost, r)
}

/// How the frozen gain enters a time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ControlCoupling {
    /// `u = −K(x_i)x_i` held constant over the interval.
    #[default]
    Frozen,
    /// `u = −K(x_i)x` inside the implicit step.
    Coupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SdreOptions {
    pub newton: NewtonOptions,
    pub solver: SolverOptions,
    pub coupling: ControlCoupling,
}

#[derive(Debug, Clone)]
pub struct SdreRun {
    pub trajectory: Trajectory,
    pub cost: f64,
    /// Wall-clock seconds for each step (ARE solve plus integration).
    pub step_seconds: Vec<f64>,
}

/// Full-order SDRE loop: one ARE per step at the frozen operator `A(x_i; μ)`.
pub fn run_sdre(
    model: &SemilinearModel,
    mu: &[f64],
    x0: &Array1<f64>,
    grid: &TimeGrid,
    opts: &SdreOptions,
) -> Result<SdreRun> {
    let mut solver = FullOrderSolver::new(opts.solver);
    let mut step_seconds = Vec::with_capacity(grid.steps);
    let trajectory = match opts.coupling {
        ControlCoupling::Frozen => {
            let dynamics = FullDynamics {
                model,
                mu,
                newton: opts.newton,
            };
            let mut clock = Instant::now();
            simulate_trajectory(
                &dynamics,
                x0,
                |i, x| {
                    if i > 0 {
                        step_seconds.push(clock.elapsed().as_secs_f64());
                    }
                    clock = Instant::now();
                    let a = model.operator(x, mu);
                    let gain = solver
                        .solve(&a, &model.actuator, &model.cost, &model.control_weight)
                        .map_err(|e| e.at_step(i))?;
                    Ok(gain.control(x))
                },
                grid,
            )
            .inspect(|_| step_seconds.push(clock.elapsed().as_secs_f64()))?
        }
        ControlCoupling::Coupled => {
            let mut traj = Trajectory {
                states: vec![x0.clone()],
                controls: Vec::with_capacity(grid.steps),
            };
            for i in 0..grid.steps {
                let clock = Instant::now();
                let x = traj.states[i].clone();
                let a = model.operator(&x, mu);
                let gain = solver
                    .solve(&a, &model.actuator, &model.cost, &model.control_weight)
                    .map_err(|e| e.at_step(i))?;
                let next = implicit_euler_feedback_step(model, mu, &x, &gain.k, grid.dt, &opts.newton)
                    .map_err(|e| e.at_step(i))?;
                traj.controls.push(gain.control(&next));
                traj.states.push(next);
                step_seconds.push(clock.elapsed().as_secs_f64());
            }
            traj
        }
    };
    let cost = evaluate_cost(&trajectory, &model.cost, &model.control_weight, grid.dt);
    Ok(SdreRun {
        trajectory,
        cost,
        step_seconds,
    })
}
