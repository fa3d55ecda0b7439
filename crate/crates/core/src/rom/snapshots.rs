use ndarray::{Array1, Array2, Axis};
use sprs::CsMat;

use crate::error::{Error, Result};
use crate::integrate::{simulate_trajectory, Dynamics, FullDynamics, TimeGrid, Trajectory};
use crate::linalg::BandLu;
use crate::pde::{OperatorTerm, SemilinearModel};
use crate::riccati::{lqr_gain, run_sdre, FeedbackGain, SdreOptions};

/// How snapshot states are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotStrategy {
    /// `u ≡ 0` at a known parameter.
    Uncontrolled,
    /// Full-order SDRE rollout at a known parameter.
    SdreControlled,
    /// One LQR gain per grid parameter, applied to the true plant.
    LinearizedGrid,
    /// As [`SnapshotStrategy::LinearizedGrid`], plus adjoint states of the linear closed loops.
    LinearizedAdjoint,
}

impl SnapshotStrategy {
    pub fn uses_grid(self) -> bool {
        matches!(self, SnapshotStrategy::LinearizedGrid | SnapshotStrategy::LinearizedAdjoint)
    }
}

/// Snapshot matrix with its provenance.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    /// `d × N`
    pub matrix: Array2<f64>,
    pub strategy: SnapshotStrategy,
    /// Grid parameters whose rollouts contributed.
    pub parameter_grid: Vec<Vec<f64>>,
    /// Grid parameters skipped because no stabilizing LQR gain exists.
    pub rejected: Vec<Vec<f64>>,
}

impl SnapshotSet {
    pub fn columns(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Inputs for [`collect_snapshots`].
pub struct SnapshotRequest<'a> {
    pub strategy: SnapshotStrategy,
    pub model: &'a SemilinearModel,
    /// Parameter for the uncontrolled and SDRE strategies.
    pub mu: Option<&'a [f64]>,
    /// Linearization parameters for the grid strategies.
    pub grid: &'a [Vec<f64>],
    /// True system the grid strategies roll out on.
    pub plant: Option<&'a dyn Dynamics>,
    pub x0: &'a Array1<f64>,
    pub time: &'a TimeGrid,
    /// Keep every `stride`-th state of each grid rollout.
    pub stride: usize,
    pub sdre: SdreOptions,
}

fn strided(traj_columns: &Array2<f64>, stride: usize) -> Array2<f64> {
    let keep: Vec<usize> = (0..traj_columns.ncols()).step_by(stride.max(1)).collect();
    traj_columns.select(Axis(1), &keep)
}

/// Model with the single constant term `A(0; μ)`.
fn linear_surrogate(model: &SemilinearModel, mu: &[f64]) -> SemilinearModel {
    SemilinearModel {
        terms: vec![OperatorTerm::Constant(model.linearization(mu))],
        ..model.clone()
    }
}

/// Backward implicit Euler for `−ṗ = A p − x`, `p(T) = 0`; returns `[p(t_0), …, p(t_{n−1})]`.
pub fn adjoint_rollout(a_lin: &CsMat<f64>, forward: &Trajectory, time: &TimeGrid) -> Result<Array2<f64>> {
    let d = a_lin.rows();
    let n = time.steps;
    if forward.states.len() < n {
        return Err(Error::InvalidInput("forward trajectory shorter than the time grid".into()));
    }
    let lu = BandLu::factor(&a_lin.map(|v| -time.dt * v), 1.0)?;
    let mut out = Array2::zeros((d, n));
    let mut p = Array1::zeros(d);
    for i in (0..n).rev() {
        let rhs = &p - &(&forward.states[i] * time.dt);
        p = lu.solve_vec(false, &rhs)?;
        out.column_mut(i).assign(&p);
    }
    Ok(out)
}

fn linear_closed_loop(model: &SemilinearModel, mu: &[f64], gain: &FeedbackGain, x0: &Array1<f64>, time: &TimeGrid, sdre: &SdreOptions) -> Result<Trajectory> {
    let linear = linear_surrogate(model, mu);
    let one = [1.0];
    let dynamics = FullDynamics {
        model: &linear,
        mu: &one,
        newton: sdre.newton,
    };
    simulate_trajectory(&dynamics, x0, |_, x| Ok(gain.control(x)), time)
}

pub fn collect_snapshots(req: &SnapshotRequest) -> Result<SnapshotSet> {
    let model = req.model;
    let uncontrolled = |_: usize, _: &Array1<f64>| Ok(Array1::zeros(model.inputs()));
    match req.strategy {
        SnapshotStrategy::Uncontrolled | SnapshotStrategy::SdreControlled => {
            let mu = req
                .mu
                .ok_or_else(|| Error::InvalidInput("strategy needs a concrete parameter".into()))?;
            let traj = if req.strategy == SnapshotStrategy::Uncontrolled {
                let dynamics = FullDynamics {
                    model,
                    mu,
                    newton: req.sdre.newton,
                };
                simulate_trajectory(&dynamics, req.x0, uncontrolled, req.time)?
            } else {
                run_sdre(model, mu, req.x0, req.time, &req.sdre)?.trajectory
            };
            let matrix = traj.snapshot_matrix();
            if matrix.iter().all(|&v| v == 0.0) {
                log::warn!("snapshot matrix is identically zero");
            }
            Ok(SnapshotSet {
                matrix,
                strategy: req.strategy,
                parameter_grid: vec![mu.to_vec()],
                rejected: Vec::new(),
            })
        }
        SnapshotStrategy::LinearizedGrid | SnapshotStrategy::LinearizedAdjoint => {
            let plant = req
                .plant
                .ok_or_else(|| Error::InvalidInput("grid strategies roll out on a plant".into()))?;
            if req.grid.is_empty() {
                return Err(Error::InvalidInput("parameter grid is empty".into()));
            }
            let mut forward_blocks = Vec::new();
            let mut adjoint_blocks = Vec::new();
            let mut used = Vec::new();
            let mut rejected = Vec::new();
            for mu_hat in req.grid {
                let a_lin = model.linearization(mu_hat);
                let gain = match lqr_gain(&a_lin, &model.actuator, &model.cost, &model.control_weight, &req.sdre.solver) {
                    Ok(g) => g,
                    Err(e) if e.is_numerical() => {
                        log::warn!("skipping grid parameter {mu_hat:?}: {e}");
                        rejected.push(mu_hat.clone());
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let traj = simulate_trajectory(plant, req.x0, |_, x| Ok(gain.control(x)), req.time)?;
                forward_blocks.push(strided(&traj.snapshot_matrix(), req.stride));
                if req.strategy == SnapshotStrategy::LinearizedAdjoint {
                    let x_lin = linear_closed_loop(model, mu_hat, &gain, req.x0, req.time, &req.sdre)?;
                    let p = adjoint_rollout(&a_lin, &x_lin, req.time)?;
                    adjoint_blocks.push(strided(&p, req.stride));
                }
                used.push(mu_hat.clone());
            }
            if used.is_empty() {
                return Err(Error::NoSurvivingConfiguration);
            }
            let views: Vec<_> = forward_blocks.iter().chain(&adjoint_blocks).map(|b| b.view()).collect();
            Ok(SnapshotSet {
                matrix: ndarray::concatenate(Axis(1), &views)?,
                strategy: req.strategy,
                parameter_grid: used,
                rejected,
            })
        }
    }
}
