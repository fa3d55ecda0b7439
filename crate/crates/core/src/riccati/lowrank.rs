//! Low-rank Newton–Kleinman with ADI Lyapunov solves for large sparse problems.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::{c64, Cholesky, Eig, Inverse, UPLO};
use sprs::CsMat;

use crate::error::{Error, Result};
use crate::linalg::{frobenius, sparse_t_mul_vec, BandLu};
use crate::pde::LowRankCost;

/// ARE with sparse `A`, dense thin `B`, and `Q = CᵀC` given by its factor.
#[derive(Debug, Clone, Copy)]
pub struct SparseAreProblem<'a> {
    pub a: &'a CsMat<f64>,
    pub b: &'a Array2<f64>,
    pub cost: &'a LowRankCost,
    pub r: &'a Array2<f64>,
}

impl SparseAreProblem<'_> {
    pub fn dim(&self) -> usize {
        self.a.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowRankOptions {
    /// Target bound on the ARE residual, relative to `max(1, ‖Q‖_F)`.
    pub tol: f64,
    pub max_newton: usize,
    pub max_adi: usize,
    pub shifts: usize,
    pub arnoldi_steps: usize,
    pub inverse_arnoldi_steps: usize,
}

impl Default for LowRankOptions {
    fn default() -> Self {
        LowRankOptions {
            tol: 1e-8,
            max_newton: 40,
            max_adi: 600,
            shifts: 16,
            arnoldi_steps: 30,
            inverse_arnoldi_steps: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LowRankSolve {
    /// `m × d`
    pub gain: Array2<f64>,
    /// `Π ≈ ZZᵀ`
    pub factor: Array2<f64>,
    pub newton_iterations: usize,
    pub adi_iterations: usize,
    /// Upper bound on the Frobenius ARE residual of `ZZᵀ`.
    pub residual_bound: f64,
}

/// Solves `(Aᵀ + pI − KᵀBᵀ) V = W` by Sherman–Morrison–Woodbury on a banded LU of `A + pI`.
struct ShiftedSolve {
    shift: f64,
    lu: BandLu,
    /// `(Aᵀ + pI)⁻¹Kᵀ`
    low_rank: Array2<f64>,
    /// `(I − Bᵀ(Aᵀ + pI)⁻¹Kᵀ)⁻¹`
    capacitance_inv: Array2<f64>,
}

impl ShiftedSolve {
    fn new(a: &CsMat<f64>, shift: f64) -> Result<Self> {
        Ok(ShiftedSolve {
            shift,
            lu: BandLu::factor(a, shift)?,
            low_rank: Array2::zeros((a.rows(), 0)),
            capacitance_inv: Array2::zeros((0, 0)),
        })
    }

    fn update_gain(&mut self, b: &Array2<f64>, k: &Array2<f64>) -> Result<()> {
        self.low_rank = self.lu.solve_mat(true, &k.t())?;
        let cap = Array2::<f64>::eye(b.ncols()) - b.t().dot(&self.low_rank);
        self.capacitance_inv = cap.inv()?;
        Ok(())
    }

    fn solve(&self, b: &Array2<f64>, w: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let y = self.lu.solve_mat(true, w)?;
        let correction = self.low_rank.dot(&self.capacitance_inv.dot(&b.t().dot(&y)));
        Ok(y + correction)
    }

    fn solve_vec(&self, b: &Array2<f64>, w: &Array1<f64>) -> Result<Array1<f64>> {
        let y = self.lu.solve_vec(true, w)?;
        let correction = self.low_rank.dot(&self.capacitance_inv.dot(&b.t().dot(&y)));
        Ok(y + correction)
    }
}

/// `Fᵀv = Aᵀv − Kᵀ(Bᵀv)`.
fn closed_loop_t_apply(a: &CsMat<f64>, b: &Array2<f64>, k: &Array2<f64>, v: &Array1<f64>) -> Array1<f64> {
    sparse_t_mul_vec(a, &v.view()) - k.t().dot(&b.t().dot(v))
}

/// Ritz values from `steps` Arnoldi iterations of `op`.
fn arnoldi_ritz(
    dim: usize,
    steps: usize,
    mut op: impl FnMut(&Array1<f64>) -> Result<Array1<f64>>,
) -> Result<Vec<c64>> {
    let steps = steps.min(dim);
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(steps + 1);
    let start = Array1::from_iter((0..dim).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64));
    let n0 = start.dot(&start).sqrt();
    basis.push(start / n0);
    let mut hess = Array2::<f64>::zeros((steps + 1, steps));
    let mut done = steps;
    for j in 0..steps {
        let mut w = op(&basis[j])?;
        for _ in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let h = v.dot(&w);
                hess[[i, j]] += h;
                w.scaled_add(-h, v);
            }
        }
        let norm = w.dot(&w).sqrt();
        if !(norm > 1e-12 * hess.column(j).iter().map(|v| v.abs()).sum::<f64>().max(1e-300)) {
            done = j + 1;
            break;
        }
        hess[[j + 1, j]] = norm;
        basis.push(w / norm);
    }
    let square = hess.slice(s![..done, ..done]).to_owned();
    let (vals, _) = square.eig()?;
    Ok(vals.to_vec())
}

/// Real ADI shifts by the greedy heuristic of picking candidates that minimize the
/// largest ADI amplification over the Ritz estimates of the spectrum of `Fᵀ`.
fn heuristic_shifts(ritz: &[c64], count: usize) -> Vec<f64> {
    let spectrum: Vec<c64> = ritz.iter().copied().filter(|z| z.re < 0.0 && z.norm().is_finite()).collect();
    let mut candidates: Vec<f64> = spectrum.iter().map(|z| -z.norm()).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup_by(|a, b| (*a - *b).abs() <= 1e-10 * b.abs());
    if candidates.is_empty() {
        return Vec::new();
    }
    let amplification = |z: c64, p: f64| ((z - p) / (z + p)).norm();
    let mut chosen: Vec<f64> = Vec::new();
    let mut products = vec![1.0; spectrum.len()];
    while chosen.len() < count.min(candidates.len()) {
        let best = candidates
            .iter()
            .filter(|p| !chosen.contains(p))
            .map(|&p| {
                let worst = spectrum
                    .iter()
                    .zip(&products)
                    .map(|(&z, &prod)| prod * amplification(z, p))
                    .fold(0.0f64, f64::max);
                (p, worst)
            })
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let Some((p, _)) = best else { break };
        for (prod, &z) in products.iter_mut().zip(&spectrum) {
            *prod *= amplification(z, p);
        }
        chosen.push(p);
    }
    chosen
}

fn gram_norm(w: &Array2<f64>) -> f64 {
    frobenius(&w.t().dot(w).view())
}

/// Low-rank Newton–Kleinman from the stabilizing gain `k0`.
pub fn solve_are_low_rank(
    p: &SparseAreProblem,
    k0: &Array2<f64>,
    opts: &LowRankOptions,
) -> Result<LowRankSolve> {
    let d = p.dim();
    let r_chol = p.r.cholesky(UPLO::Lower)?;
    let r_inv = p.r.inv()?;
    let target = opts.tol * p.cost.frobenius().max(1.0);
    let adi_target = 0.1 * target;

    let mut k = k0.clone();

    // Spectrum estimates of the initial closed loop drive the shift choice.
    let mut ritz = arnoldi_ritz(d, opts.arnoldi_steps, |v| Ok(closed_loop_t_apply(p.a, p.b, &k, v)))?;
    if opts.inverse_arnoldi_steps > 0 {
        if let Ok(mut inverse) = ShiftedSolve::new(p.a, 0.0) {
            inverse.update_gain(p.b, &k)?;
            let inv_ritz = arnoldi_ritz(d, opts.inverse_arnoldi_steps, |v| inverse.solve_vec(p.b, v))?;
            ritz.extend(inv_ritz.into_iter().filter(|z| z.norm() > 0.0).map(|z| c64::new(1.0, 0.0) / z));
        }
    }
    let shifts = heuristic_shifts(&ritz, opts.shifts);
    if shifts.is_empty() {
        return Err(Error::UnstableInitialGain(
            "no stable Ritz values for the initial closed loop".into(),
        ));
    }
    let mut solvers = shifts
        .iter()
        .map(|&s| ShiftedSolve::new(p.a, s))
        .collect::<Result<Vec<_>>>()?;

    let mut adi_total = 0;
    for newton in 0..opts.max_newton {
        for solver in solvers.iter_mut() {
            solver.update_gain(p.b, &k)?;
        }
        let mut w = concatenate![Axis(1), p.cost.factor.t(), k.t().dot(&r_chol)];
        let initial = gram_norm(&w);
        let mut blocks: Vec<Array2<f64>> = Vec::new();
        let mut lyap_residual = initial;
        let mut converged = lyap_residual <= adi_target;
        let mut it = 0;
        while !converged && it < opts.max_adi {
            let solver = &solvers[it % solvers.len()];
            let v = solver.solve(p.b, &w.view())?;
            w.scaled_add(-2.0 * solver.shift, &v);
            blocks.push(v * (-2.0 * solver.shift).sqrt());
            lyap_residual = gram_norm(&w);
            it += 1;
            if !lyap_residual.is_finite() || lyap_residual > 1e8 * initial.max(1e-300) {
                return Err(Error::UnstableInitialGain(format!(
                    "ADI diverged at Newton step {newton} (residual {lyap_residual:.3e})"
                )));
            }
            converged = lyap_residual <= adi_target;
        }
        adi_total += it;
        if !converged {
            return Err(Error::NoStabilizingSolution(format!(
                "ADI stalled at residual {lyap_residual:.3e} after {it} iterations"
            )));
        }
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        let z = if views.is_empty() {
            Array2::zeros((d, 0))
        } else {
            concatenate(Axis(1), &views)?
        };
        let next = r_inv.dot(&p.b.t().dot(&z)).dot(&z.t());
        let delta = &next - &k;
        // ARE residual of ZZᵀ = −ΔKᵀRΔK + Lyapunov residual.
        let ld = r_chol.t().dot(&delta);
        let bound = frobenius(&ld.dot(&ld.t()).view()) + lyap_residual;
        k = next;
        if bound <= target {
            return Ok(LowRankSolve {
                gain: k,
                factor: z,
                newton_iterations: newton + 1,
                adi_iterations: adi_total,
                residual_bound: bound,
            });
        }
    }
    Err(Error::NoStabilizingSolution(format!(
        "low-rank Newton–Kleinman did not converge in {} iterations",
        opts.max_newton
    )))
}

/// Exact Frobenius ARE residual of `Π = ZZᵀ`, evaluated densely (test and diagnostics use).
pub fn low_rank_care_residual(p: &SparseAreProblem, z: &Array2<f64>) -> f64 {
    let pi = z.dot(&z.t());
    let a = crate::linalg::sparse_to_dense(p.a);
    let r_inv = p.r.inv().expect("validated control weight");
    let bt_pi = p.b.t().dot(&pi);
    let res = a.t().dot(&pi) + pi.dot(&a) - bt_pi.t().dot(&r_inv).dot(&bt_pi) + p.cost.dense();
    frobenius(&res.view())
}
