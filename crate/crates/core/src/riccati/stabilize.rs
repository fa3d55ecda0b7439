//! Initial stabilizing gains for large sparse systems by stabilizing only the
//! rightmost invariant subspace.

use ndarray::{s, Array2};
use ndarray_linalg::{c64, Eig, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sprs::CsMat;

use super::{solve_are_dense, AreProblem};
use crate::error::{Error, Result};
use crate::linalg::{
    frobenius, orthonormal_columns, ordered_schur, sparse_t_mul_dense,
    symmetric_part_gershgorin_bound, BandLu, HalfPlane,
};
use crate::pde::LowRankCost;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizeOptions {
    /// Eigenvalues with real part above `−margin` are moved.
    pub margin: f64,
    pub initial_block: usize,
    pub max_iters: usize,
    /// Largest rightmost subspace tried before giving up.
    pub max_block: usize,
    pub seed: u64,
}

impl Default for StabilizeOptions {
    fn default() -> Self {
        StabilizeOptions {
            margin: 1.0,
            initial_block: 8,
            max_iters: 300,
            max_block: 64,
            seed: 7,
        }
    }
}

/// Rightmost eigenpairs of `Aᵀ` as an orthonormal `V` with `AᵀV ≈ VH`.
struct RightmostSubspace {
    basis: Array2<f64>,
    /// Rayleigh quotient `VᵀAᵀV`.
    ritz: Array2<f64>,
}

fn rightmost_subspace(a: &CsMat<f64>, block: usize, opts: &StabilizeOptions) -> Result<RightmostSubspace> {
    let d = a.rows();
    let block = block.min(d);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = Array2::from_shape_fn((d, block), |_| StandardNormal.sample(&mut rng));
    let mut v = orthonormal_columns(&start.view())?;
    let mut sigma = symmetric_part_gershgorin_bound(a) + 1.0;
    let mut lu = BandLu::factor(a, -sigma)?;
    let mut previous: Option<Vec<f64>> = None;
    for it in 0..opts.max_iters {
        v = orthonormal_columns(&lu.solve_mat(true, &v.view())?.view())?;
        if it % 4 != 3 {
            continue;
        }
        let h = v.t().dot(&sparse_t_mul_dense(a, &v.view()));
        let (vals, _) = h.eig()?;
        let mut re: Vec<f64> = vals.iter().map(|z| z.re).collect();
        re.sort_by(|x, y| y.partial_cmp(x).unwrap());
        // Pull the pole in towards the spectrum once the rightmost part is located.
        let closer = re[0] + 1.0;
        if closer < sigma - 1e-8 * sigma.abs().max(1.0) && previous.is_some() {
            sigma = closer;
            lu = BandLu::factor(a, -sigma)?;
        }
        let converged = previous.as_ref().is_some_and(|prev| {
            prev.iter()
                .zip(&re)
                .all(|(p, q)| (p - q).abs() <= 1e-10 * q.abs().max(1.0))
        });
        previous = Some(re);
        if converged {
            break;
        }
    }
    let h = v.t().dot(&sparse_t_mul_dense(a, &v.view()));
    Ok(RightmostSubspace { basis: v, ritz: h })
}

fn controllable(a_s: &Array2<f64>, b_s: &Array2<f64>, unstable: &[c64]) -> Result<bool> {
    let p = a_s.nrows();
    let scale = frobenius(&a_s.view()) + frobenius(&b_s.view());
    for &lambda in unstable {
        let mut pbh = Array2::<c64>::zeros((p, p + b_s.ncols()));
        for i in 0..p {
            for j in 0..p {
                pbh[[i, j]] = c64::new(a_s[[i, j]], 0.0);
            }
            pbh[[i, i]] -= lambda;
            for j in 0..b_s.ncols() {
                pbh[[i, p + j]] = c64::new(b_s[[i, j]], 0.0);
            }
        }
        let (_, sv, _) = pbh.svd(false, false)?;
        let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if smallest <= 1e-8 * scale.max(1e-300) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Gain `K₀` with `A − BK₀` stable, or an error if an unstable mode is uncontrollable.
pub fn stabilizing_gain(
    a: &CsMat<f64>,
    b: &Array2<f64>,
    cost: &LowRankCost,
    r: &Array2<f64>,
    opts: &StabilizeOptions,
) -> Result<Array2<f64>> {
    let d = a.rows();
    let m = b.ncols();
    let mut block = opts.initial_block.max(2);
    loop {
        let sub = rightmost_subspace(a, block, opts)?;
        let shifted = &sub.ritz + &(Array2::<f64>::eye(sub.ritz.nrows()) * opts.margin);
        let schur = ordered_schur(&shifted.view(), HalfPlane::Right)?;
        let selected = schur.selected;
        if selected == 0 {
            return Ok(Array2::zeros((m, d)));
        }
        if selected >= sub.ritz.nrows() - 1 && block < d {
            if block >= opts.max_block {
                return Err(Error::NoStabilizingSolution(format!(
                    "more than {} modes to the right of -{} (partial stabilization limit)",
                    selected, opts.margin
                )));
            }
            block = (2 * block).min(d).min(opts.max_block);
            continue;
        }
        let vu = sub.basis.dot(&schur.z.slice(s![.., ..selected]));
        let hu = &schur.t.slice(s![..selected, ..selected]) - &(Array2::<f64>::eye(selected) * opts.margin);
        // Aᵀ V_u = V_u H_u, so y = V_uᵀx obeys ẏ = H_uᵀ y + V_uᵀB u.
        let a_s = hu.t().to_owned();
        let b_s = vu.t().dot(b);
        let unstable: Vec<c64> = {
            let (vals, _) = a_s.eig()?;
            vals.iter().copied().filter(|z| z.re >= 0.0).collect()
        };
        if !controllable(&a_s, &b_s, &unstable)? {
            return Err(Error::NoStabilizingSolution(
                "an unstable mode is not controllable from the actuator".into(),
            ));
        }
        let cq = cost.factor.dot(&vu);
        let q_norm = cost.frobenius().max(1e-12);
        let q_s = cq.t().dot(&cq) + Array2::<f64>::eye(selected) * (1e-2 * q_norm);
        let small = AreProblem::new(a_s, b_s, q_s, r.clone())?;
        let gain = solve_are_dense(&small)?;
        return Ok(gain.k.dot(&vu.t()));
    }
}
