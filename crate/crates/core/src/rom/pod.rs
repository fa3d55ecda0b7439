use ndarray::{s, Array1, Array2, ArrayView2};
use ndarray_linalg::{JobSvd, SVDDC};

use crate::error::{Error, Result};
use crate::linalg::{pivoted_qr_order, solve_dense};

/// How many leading singular vectors to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankSelection {
    Fixed(usize),
    /// Numerical rank: singular values above `tol·σ₁`.
    Tolerance(f64),
}

impl Default for RankSelection {
    fn default() -> Self {
        RankSelection::Tolerance(1e-10)
    }
}

/// Left singular vectors and singular values of `a` (thin).
pub fn thin_svd(a: &ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let (u, sv, _) = a.to_owned().svddc(JobSvd::Some)?;
    let u = u.ok_or_else(|| Error::InvalidInput("SVD returned no left vectors".into()))?;
    Ok((u, sv))
}

pub fn numerical_rank(singular_values: &Array1<f64>, tol: f64) -> usize {
    let top = singular_values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > tol * top).count()
}

fn select_rank(singular_values: &Array1<f64>, selection: RankSelection) -> usize {
    let rank = numerical_rank(singular_values, 1e-13);
    match selection {
        RankSelection::Tolerance(tol) => numerical_rank(singular_values, tol),
        RankSelection::Fixed(r) => {
            if r > rank {
                log::warn!("requested rank {r} exceeds numerical rank {rank}; clamping");
            }
            r.min(rank)
        }
    }
}

/// Orthonormal POD basis `Ψ` (`d × r`).
#[derive(Debug, Clone)]
pub struct PodBasis {
    pub psi: Array2<f64>,
    pub singular_values: Array1<f64>,
}

impl PodBasis {
    pub fn rank(&self) -> usize {
        self.psi.ncols()
    }
}

/// Thin SVD of the (uncentered) snapshot matrix.
pub fn compute_pod_basis(snapshots: &Array2<f64>, selection: RankSelection) -> Result<PodBasis> {
    let (u, sv) = thin_svd(&snapshots.view())?;
    let r = select_rank(&sv, selection);
    if r == 0 {
        return Err(Error::InvalidInput("snapshot matrix is numerically zero".into()));
    }
    Ok(PodBasis {
        psi: u.slice(s![.., ..r]).to_owned(),
        singular_values: sv,
    })
}

/// DEIM basis `Φ` and its interpolation indices.
#[derive(Debug, Clone)]
pub struct DeimBasis {
    pub phi: Array2<f64>,
    pub indices: Vec<usize>,
    pub singular_values: Array1<f64>,
}

impl DeimBasis {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `PᵀΦ` (`ℓ × ℓ`).
    pub fn sampled_phi(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len(), self.len()), |(i, j)| self.phi[[self.indices[i], j]])
    }

    /// `Φ(PᵀΦ)⁻¹Pᵀf`.
    pub fn reconstruct(&self, f: &Array1<f64>) -> Result<Array1<f64>> {
        let sampled = Array2::from_shape_fn((self.len(), 1), |(i, _)| f[self.indices[i]]);
        let (coef, _) = solve_dense(&self.sampled_phi(), &sampled.view())?;
        Ok(self.phi.dot(&coef.column(0)))
    }
}

/// POD of the nonlinear snapshots, then QR-with-pivoting of `Φᵀ` for the indices.
pub fn build_deim(nonlinear: &Array2<f64>, selection: RankSelection) -> Result<DeimBasis> {
    let (u, sv) = thin_svd(&nonlinear.view())?;
    let l = select_rank(&sv, selection);
    if l == 0 {
        return Err(Error::InvalidInput("nonlinear snapshot matrix is numerically zero".into()));
    }
    let phi = u.slice(s![.., ..l]).to_owned();
    let order = pivoted_qr_order(&phi.t())?;
    Ok(DeimBasis {
        phi,
        indices: order[..l].to_vec(),
        singular_values: sv,
    })
}
