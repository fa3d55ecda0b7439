use std::collections::HashMap;
use std::time::Instant;

use ndarray::{Array1, Array2};
use ndarray_linalg::Solve;

use super::pod::{build_deim, DeimBasis, PodBasis, RankSelection};
use crate::error::{Error, Result};
use crate::integrate::{evaluate_cost, simulate_trajectory, Dynamics, NewtonOptions, TimeGrid, Trajectory};
use crate::linalg::{solve_dense, sparse_mul_dense, symmetrize};
use crate::pde::{OperatorTerm, SemilinearModel};
use crate::riccati::{solve_are_dense, AreProblem};

/// Whether each state-dependent term gets its own DEIM basis, or one basis built from
/// the assembled operator at a reference parameter serves every term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeimFidelity {
    #[default]
    PerTerm,
    Combined,
}

/// Full-state entries a DEIM term reads, with the matching rows of `Ψ`.
#[derive(Debug, Clone)]
pub struct StencilMap {
    pub support: Vec<usize>,
    /// `|support| × r`
    pub psi_rows: Array2<f64>,
    local: HashMap<usize, usize>,
}

impl StencilMap {
    fn new(support: Vec<usize>, psi: &Array2<f64>) -> Self {
        let local = support.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        let psi_rows = Array2::from_shape_fn((support.len(), psi.ncols()), |(l, j)| psi[[support[l], j]]);
        StencilMap {
            support,
            psi_rows,
            local,
        }
    }

    pub fn local_index(&self, global: usize) -> usize {
        self.local[&global]
    }
}

/// DEIM-reduced state-dependent term: `M·PᵀAⱼ(Ψx_r)Ψ`.
#[derive(Debug, Clone)]
pub struct DeimTerm {
    pub operator: OperatorTerm,
    pub indices: Vec<usize>,
    /// `ΨᵀΦ(PᵀΦ)⁻¹`, `r × ℓ`
    pub m: Array2<f64>,
    /// `PᵀΨ`, `ℓ × r`
    pub sample_map: Array2<f64>,
    pub stencil_map: StencilMap,
    /// 1-norm condition estimate of `PᵀΦ`.
    pub condition: f64,
}

impl DeimTerm {
    fn new(operator: OperatorTerm, deim: &DeimBasis, psi: &Array2<f64>) -> Result<Self> {
        let sampled = deim.sampled_phi();
        let rhs = psi.t().dot(&deim.phi);
        // M = ΨᵀΦ(PᵀΦ)⁻¹  ⇔  (PᵀΦ)ᵀMᵀ = (ΨᵀΦ)ᵀ.
        let (m_t, rcond) = solve_dense(&sampled.t().to_owned(), &rhs.t())?;
        let condition = if rcond > 0.0 { 1.0 / rcond } else { f64::INFINITY };
        if !(condition <= 1e12) {
            return Err(Error::IllConditioned { cond: condition });
        }
        log::debug!("DEIM term with {} points, cond(PᵀΦ) = {condition:.3e}", deim.len());
        let mut support: Vec<usize> = deim
            .indices
            .iter()
            .flat_map(|&k| operator.stencil(k))
            .collect();
        support.sort_unstable();
        support.dedup();
        let sample_map = Array2::from_shape_fn((deim.len(), psi.ncols()), |(i, j)| psi[[deim.indices[i], j]]);
        Ok(DeimTerm {
            stencil_map: StencilMap::new(support, psi),
            operator,
            indices: deim.indices.clone(),
            m: m_t.t().to_owned(),
            sample_map,
            condition,
        })
    }

    fn rows(&self, x: &dyn Fn(usize) -> f64, jacobian: bool) -> Array2<f64> {
        let r = self.stencil_map.psi_rows.ncols();
        let mut out = Array2::zeros((self.indices.len(), r));
        let mut buf = Vec::with_capacity(8);
        for (i, &k) in self.indices.iter().enumerate() {
            buf.clear();
            if jacobian {
                self.operator.jacobian_row_entries(k, x, &mut buf);
            } else {
                self.operator.row_entries(k, x, &mut buf);
            }
            let mut row = out.row_mut(i);
            for &(col, v) in &buf {
                row.scaled_add(v, &self.stencil_map.psi_rows.row(self.stencil_map.local_index(col)));
            }
        }
        out
    }

    /// `PᵀAⱼ(x)Ψ`, reading the full state only through `x`.
    pub fn sampled_rows(&self, x: &dyn Fn(usize) -> f64) -> Array2<f64> {
        self.rows(x, false)
    }

    /// `PᵀJⱼ(x)Ψ` where `Jⱼ` is the Jacobian of `x ↦ Aⱼ(x)x`.
    pub fn sampled_jacobian_rows(&self, x: &dyn Fn(usize) -> f64) -> Array2<f64> {
        self.rows(x, true)
    }

    fn lifted_support(&self, x_r: &Array1<f64>) -> Array1<f64> {
        self.stencil_map.psi_rows.dot(x_r)
    }

    pub fn operator_at(&self, x_r: &Array1<f64>) -> Array2<f64> {
        let lifted = self.lifted_support(x_r);
        let acc = |g: usize| lifted[self.stencil_map.local_index(g)];
        self.m.dot(&self.sampled_rows(&acc))
    }

    pub fn jacobian_at(&self, x_r: &Array1<f64>) -> Array2<f64> {
        let lifted = self.lifted_support(x_r);
        let acc = |g: usize| lifted[self.stencil_map.local_index(g)];
        self.m.dot(&self.sampled_jacobian_rows(&acc))
    }
}

#[derive(Debug, Clone)]
pub enum ReducedTerm {
    /// Exact Galerkin projection `ΨᵀAⱼΨ` of a constant term.
    Galerkin(Array2<f64>),
    Deim(DeimTerm),
}

/// DEIM bases to use when reducing a model.
#[derive(Debug, Clone)]
pub enum DeimSetup {
    /// One entry per model term; `None` for constant terms (projected exactly).
    PerTerm(Vec<Option<DeimBasis>>),
    /// One basis shared by all terms.
    Combined(DeimBasis),
}

impl DeimSetup {
    /// DEIM bases from the snapshot states.
    ///
    /// Per-term mode uses `Fⱼ = [Aⱼ(xᵢ)xᵢ]` for each state-dependent term; combined mode uses
    /// `F = [A(xᵢ; μ_ref)xᵢ]`.
    pub fn from_snapshots(
        model: &SemilinearModel,
        snapshots: &Array2<f64>,
        fidelity: DeimFidelity,
        reference_mu: &[f64],
        selection: RankSelection,
    ) -> Result<Self> {
        let columns: Vec<Array1<f64>> = snapshots.columns().into_iter().map(|c| c.to_owned()).collect();
        let gather = |f: &dyn Fn(&Array1<f64>) -> Array1<f64>| {
            let mut out = Array2::zeros((model.dim(), columns.len()));
            for (i, x) in columns.iter().enumerate() {
                out.column_mut(i).assign(&f(x));
            }
            out
        };
        match fidelity {
            DeimFidelity::PerTerm => model
                .terms
                .iter()
                .map(|term| {
                    if term.is_constant() {
                        Ok(None)
                    } else {
                        build_deim(&gather(&|x| term.apply(x)), selection).map(Some)
                    }
                })
                .collect::<Result<Vec<_>>>()
                .map(DeimSetup::PerTerm),
            DeimFidelity::Combined => Ok(DeimSetup::Combined(build_deim(
                &gather(&|x| model.drift(x, reference_mu)),
                selection,
            )?)),
        }
    }

    pub fn fidelity(&self) -> DeimFidelity {
        match self {
            DeimSetup::PerTerm(_) => DeimFidelity::PerTerm,
            DeimSetup::Combined(_) => DeimFidelity::Combined,
        }
    }
}

/// Galerkin/DEIM reduced model `ẋ_r = Σⱼ μⱼ A_{r,j}(x_r) x_r + B_r u`.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    /// `Ψ`, `d × r`
    pub basis: Array2<f64>,
    pub terms: Vec<ReducedTerm>,
    /// `ΨᵀB`
    pub actuator: Array2<f64>,
    /// `ΨᵀQΨ`
    pub cost: Array2<f64>,
    pub control_weight: Array2<f64>,
    pub fidelity: DeimFidelity,
}

/// Projects constant terms and hyper-reduces state-dependent ones.
pub fn reduce_operators(model: &SemilinearModel, pod: &PodBasis, deim: &DeimSetup) -> Result<ReducedModel> {
    let psi = &pod.psi;
    if psi.ncols() == 0 {
        return Err(Error::InvalidInput("reduced basis is empty".into()));
    }
    if psi.nrows() != model.dim() {
        return Err(Error::InvalidInput(format!(
            "basis has {} rows but the model has dimension {}",
            psi.nrows(),
            model.dim()
        )));
    }
    let galerkin = |term: &OperatorTerm| -> Result<ReducedTerm> {
        match term {
            OperatorTerm::Constant(a) => Ok(ReducedTerm::Galerkin(psi.t().dot(&sparse_mul_dense(a, &psi.view())))),
            _ => Err(Error::InvalidInput("state-dependent term needs a DEIM basis".into())),
        }
    };
    let terms = match deim {
        DeimSetup::PerTerm(bases) => {
            if bases.len() != model.n_terms() {
                return Err(Error::InvalidInput("one DEIM entry per model term expected".into()));
            }
            model
                .terms
                .iter()
                .zip(bases)
                .map(|(term, basis)| match basis {
                    Some(b) => Ok(ReducedTerm::Deim(DeimTerm::new(term.clone(), b, psi)?)),
                    None => galerkin(term),
                })
                .collect::<Result<Vec<_>>>()?
        }
        DeimSetup::Combined(b) => model
            .terms
            .iter()
            .map(|term| Ok(ReducedTerm::Deim(DeimTerm::new(term.clone(), b, psi)?)))
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(ReducedModel {
        basis: psi.clone(),
        terms,
        actuator: psi.t().dot(&model.actuator),
        cost: symmetrize(&model.cost.project(&psi.view())),
        control_weight: model.control_weight.clone(),
        fidelity: deim.fidelity(),
    })
}

impl ReducedModel {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn full_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn lift(&self, x_r: &Array1<f64>) -> Array1<f64> {
        self.basis.dot(x_r)
    }

    pub fn project(&self, x: &Array1<f64>) -> Array1<f64> {
        self.basis.t().dot(x)
    }

    /// Reduced operator of term `j` at `x_r`.
    pub fn term_operator(&self, j: usize, x_r: &Array1<f64>) -> Array2<f64> {
        match &self.terms[j] {
            ReducedTerm::Galerkin(a) => a.clone(),
            ReducedTerm::Deim(t) => t.operator_at(x_r),
        }
    }

    /// `A_r(x_r; μ) = Σⱼ μⱼ A_{r,j}(x_r)`.
    pub fn operator(&self, x_r: &Array1<f64>, mu: &[f64]) -> Array2<f64> {
        assert_eq!(mu.len(), self.terms.len(), "one coefficient per reduced term");
        let r = self.dim();
        let mut out = Array2::zeros((r, r));
        for (j, &m) in mu.iter().enumerate() {
            if m != 0.0 {
                out.scaled_add(m, &self.term_operator(j, x_r));
            }
        }
        out
    }

    pub fn drift(&self, x_r: &Array1<f64>, mu: &[f64]) -> Array1<f64> {
        self.operator(x_r, mu).dot(x_r)
    }

    pub fn jacobian(&self, x_r: &Array1<f64>, mu: &[f64]) -> Array2<f64> {
        let r = self.dim();
        let mut out = Array2::zeros((r, r));
        for (term, &m) in self.terms.iter().zip(mu) {
            if m == 0.0 {
                continue;
            }
            match term {
                ReducedTerm::Galerkin(a) => out.scaled_add(m, a),
                ReducedTerm::Deim(t) => out.scaled_add(m, &t.jacobian_at(x_r)),
            }
        }
        out
    }
}

/// Implicit Euler on the reduced dynamics (dense Newton).
#[derive(Debug, Clone, Copy)]
pub struct ReducedDynamics<'a> {
    pub model: &'a ReducedModel,
    pub mu: &'a [f64],
    pub newton: NewtonOptions,
}

impl Dynamics for ReducedDynamics<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn step(&self, x: &Array1<f64>, u: &Array1<f64>, dt: f64) -> Result<Array1<f64>> {
        reduced_implicit_euler_step(self.model, self.mu, x, u, dt, &self.newton)
    }
}

pub fn reduced_implicit_euler_step(
    model: &ReducedModel,
    mu: &[f64],
    x: &Array1<f64>,
    u: &Array1<f64>,
    dt: f64,
    opts: &NewtonOptions,
) -> Result<Array1<f64>> {
    let forcing = x + &(model.actuator.dot(u) * dt);
    let bound = opts.tol * (1.0 + x.dot(x).sqrt());
    let residual_of = |y: &Array1<f64>| y - &(model.drift(y, mu) * dt) - &forcing;
    let mut y = x.clone();
    let mut residual = residual_of(&y);
    let mut res_norm = residual.dot(&residual).sqrt();
    let r = model.dim();
    for _ in 0..opts.max_iters {
        if res_norm <= bound {
            return Ok(y);
        }
        let jac = Array2::<f64>::eye(r) - model.jacobian(&y, mu) * dt;
        let delta = jac.solve(&residual)?;
        y -= &delta;
        residual = residual_of(&y);
        res_norm = residual.dot(&residual).sqrt();
    }
    if res_norm <= bound {
        return Ok(y);
    }
    Err(Error::NewtonDiverged {
        iterations: opts.max_iters,
        residual: res_norm,
    })
}

#[derive(Debug, Clone)]
pub struct ReducedRun {
    pub reduced: Trajectory,
    pub lifted: Trajectory,
    /// Cost evaluated with `Q_r` on the reduced trajectory.
    pub cost: f64,
    pub step_seconds: Vec<f64>,
}

/// Reduced SDRE loop: one `r × r` ARE per step at `A_r(x_r(t_i); μ)`.
pub fn run_pod_deim_sdre(
    model: &ReducedModel,
    mu: &[f64],
    x0: &Array1<f64>,
    grid: &TimeGrid,
    newton: &NewtonOptions,
) -> Result<ReducedRun> {
    let dynamics = ReducedDynamics {
        model,
        mu,
        newton: *newton,
    };
    let mut step_seconds = Vec::with_capacity(grid.steps);
    let mut clock = Instant::now();
    let reduced = simulate_trajectory(
        &dynamics,
        &model.project(x0),
        |i, x_r| {
            if i > 0 {
                step_seconds.push(clock.elapsed().as_secs_f64());
            }
            clock = Instant::now();
            let p = AreProblem::new(
                model.operator(x_r, mu),
                model.actuator.clone(),
                model.cost.clone(),
                model.control_weight.clone(),
            )?;
            let gain = solve_are_dense(&p).map_err(|e| e.at_step(i))?;
            Ok(gain.control(x_r))
        },
        grid,
    )?;
    step_seconds.push(clock.elapsed().as_secs_f64());
    let cost = evaluate_cost(&reduced, &model.cost, &model.control_weight, grid.dt);
    let lifted = reduced.map_states(|x_r| model.lift(x_r));
    Ok(ReducedRun {
        reduced,
        lifted,
        cost,
        step_seconds,
    })
}

/// Trajectory and cost discrepancy between a full run and a lifted reduced run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    /// `max_i ‖x(t_i) − Ψx_r(t_i)‖ / ‖x(t_i)‖`
    pub state_error: f64,
    /// `|J − J_r|`
    pub cost_error: f64,
    /// Time instants skipped because the reference state vanished.
    pub skipped: usize,
}

pub fn error_metrics(full: &Trajectory, lifted: &Trajectory, full_cost: f64, reduced_cost: f64) -> ErrorMetrics {
    let mut worst = 0.0f64;
    let mut skipped = 0;
    for (x, y) in full.states.iter().zip(&lifted.states) {
        let nx = x.dot(x).sqrt();
        if nx == 0.0 {
            skipped += 1;
            continue;
        }
        let diff = x - y;
        worst = worst.max(diff.dot(&diff).sqrt() / nx);
    }
    if skipped > 0 {
        log::warn!("state error skipped {skipped} instants with a zero reference state");
    }
    ErrorMetrics {
        state_error: worst,
        cost_error: (full_cost - reduced_cost).abs(),
        skipped,
    }
}
