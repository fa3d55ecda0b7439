//! Thin safe wrappers over the LAPACK routines that `ndarray-linalg` does not
//! expose (ordered real Schur, pivoted QR, banded LU, triangular Sylvester),
//! plus a handful of dense helpers shared by the solvers.

use std::os::raw::{c_char, c_int};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, ShapeBuilder};
use ndarray_linalg::{Eig, Factorize, ReciprocalConditionNum, Solve, QR};
use sprs::CsMat;

use crate::error::{Error, Result};

/// Column-major copy of a dense matrix.
pub(crate) fn to_col_major(a: &ArrayView2<f64>) -> Vec<f64> {
    a.t().iter().copied().collect()
}

pub(crate) fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols).f(), data)
        .expect("column-major buffer has matching length")
        .as_standard_layout()
        .into_owned()
}

fn check(routine: &'static str, info: c_int) -> Result<()> {
    if info == 0 {
        Ok(())
    } else {
        Err(Error::Lapack { routine, info })
    }
}

/// Which half-plane of eigenvalues is moved to the leading Schur block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfPlane {
    /// Re λ < 0.
    Left,
    /// Re λ > 0.
    Right,
}

unsafe extern "C" fn select_left(re: *const f64, _im: *const f64) -> c_int {
    (*re < 0.0) as c_int
}

unsafe extern "C" fn select_right(re: *const f64, _im: *const f64) -> c_int {
    (*re > 0.0) as c_int
}

/// Real Schur decomposition `A = Z T Zᵀ` with the selected eigenvalues ordered first.
#[derive(Debug, Clone)]
pub struct OrderedSchur {
    pub t: Array2<f64>,
    pub z: Array2<f64>,
    /// Number of selected eigenvalues (leading block size).
    pub selected: usize,
    pub eig_re: Vec<f64>,
    pub eig_im: Vec<f64>,
}

pub fn ordered_schur(a: &ArrayView2<f64>, half: HalfPlane) -> Result<OrderedSchur> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidInput("schur: matrix must be square".into()));
    }
    let mut buf = to_col_major(a);
    let ni = n as c_int;
    let mut sdim: c_int = 0;
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut vs = vec![0.0; n * n];
    let mut bwork = vec![0 as c_int; n];
    let mut info: c_int = 0;
    let select = match half {
        HalfPlane::Left => select_left as unsafe extern "C" fn(*const f64, *const f64) -> c_int,
        HalfPlane::Right => select_right,
    };
    let jobvs = b'V' as c_char;
    let sort = b'S' as c_char;
    let mut query = 0.0;
    unsafe {
        lapack_sys::dgees_(
            &jobvs,
            &sort,
            Some(select),
            &ni,
            buf.as_mut_ptr(),
            &ni.max(1),
            &mut sdim,
            wr.as_mut_ptr(),
            wi.as_mut_ptr(),
            vs.as_mut_ptr(),
            &ni.max(1),
            &mut query,
            &-1,
            bwork.as_mut_ptr(),
            &mut info,
        );
    }
    check("dgees(query)", info)?;
    let lwork = (query as usize).max(3 * n.max(1));
    let mut work = vec![0.0; lwork];
    unsafe {
        lapack_sys::dgees_(
            &jobvs,
            &sort,
            Some(select),
            &ni,
            buf.as_mut_ptr(),
            &ni.max(1),
            &mut sdim,
            wr.as_mut_ptr(),
            wi.as_mut_ptr(),
            vs.as_mut_ptr(),
            &ni.max(1),
            work.as_mut_ptr(),
            &(lwork as c_int),
            bwork.as_mut_ptr(),
            &mut info,
        );
    }
    check("dgees", info)?;
    Ok(OrderedSchur {
        t: from_col_major(n, n, buf),
        z: from_col_major(n, n, vs),
        selected: sdim as usize,
        eig_re: wr,
        eig_im: wi,
    })
}

/// Column order produced by QR with column pivoting (`dgeqp3`), 0-based.
pub fn pivoted_qr_order(a: &ArrayView2<f64>) -> Result<Vec<usize>> {
    let (m, n) = a.dim();
    let mut buf = to_col_major(a);
    let mut jpvt = vec![0 as c_int; n];
    let mut tau = vec![0.0; m.min(n).max(1)];
    let mut info: c_int = 0;
    let (mi, ni) = (m as c_int, n as c_int);
    let mut query = 0.0;
    unsafe {
        lapack_sys::dgeqp3_(
            &mi,
            &ni,
            buf.as_mut_ptr(),
            &mi.max(1),
            jpvt.as_mut_ptr(),
            tau.as_mut_ptr(),
            &mut query,
            &-1,
            &mut info,
        );
    }
    check("dgeqp3(query)", info)?;
    let lwork = (query as usize).max(3 * n + 1);
    let mut work = vec![0.0; lwork];
    unsafe {
        lapack_sys::dgeqp3_(
            &mi,
            &ni,
            buf.as_mut_ptr(),
            &mi.max(1),
            jpvt.as_mut_ptr(),
            tau.as_mut_ptr(),
            work.as_mut_ptr(),
            &(lwork as c_int),
            &mut info,
        );
    }
    check("dgeqp3", info)?;
    Ok(jpvt.into_iter().map(|p| p as usize - 1).collect())
}

/// Solves `op(A) X + isgn X op(B) = C` for quasi-triangular `A`, `B` (real Schur form).
/// Returns the solution already divided by the LAPACK scale factor.
pub fn quasi_triangular_sylvester(
    a: &ArrayView2<f64>,
    transpose_a: bool,
    b: &ArrayView2<f64>,
    transpose_b: bool,
    isgn: i32,
    c: &ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let m = a.nrows();
    let n = b.nrows();
    let abuf = to_col_major(a);
    let bbuf = to_col_major(b);
    let mut cbuf = to_col_major(c);
    let trana = if transpose_a { b'T' } else { b'N' } as c_char;
    let tranb = if transpose_b { b'T' } else { b'N' } as c_char;
    let mut scale = 1.0;
    let mut info: c_int = 0;
    unsafe {
        lapack_sys::dtrsyl_(
            &trana,
            &tranb,
            &(isgn as c_int),
            &(m as c_int),
            &(n as c_int),
            abuf.as_ptr(),
            &(m.max(1) as c_int),
            bbuf.as_ptr(),
            &(n.max(1) as c_int),
            cbuf.as_mut_ptr(),
            &(m.max(1) as c_int),
            &mut scale,
            &mut info,
        );
    }
    // info = 1 signals a perturbed (nearly singular) problem; the result is still usable
    // but the caller's residual check decides.
    if info < 0 {
        return Err(Error::Lapack {
            routine: "dtrsyl",
            info,
        });
    }
    let mut x = from_col_major(m, n, cbuf);
    if scale != 1.0 {
        x.mapv_inplace(|v| v / scale);
    }
    Ok(x)
}

/// LU factorization of a banded matrix `A + shift·I` (`dgbtrf`).
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>,
    ipiv: Vec<c_int>,
}

/// Lower and upper bandwidth of a sparse matrix pattern.
pub fn bandwidth(a: &CsMat<f64>) -> (usize, usize) {
    let mut kl = 0usize;
    let mut ku = 0usize;
    for (_, (i, j)) in a.iter() {
        if i > j {
            kl = kl.max(i - j);
        } else {
            ku = ku.max(j - i);
        }
    }
    (kl, ku)
}

impl BandLu {
    /// Factorizes `A + shift·I`; bandwidths are taken from the sparsity pattern of `A`.
    pub fn factor(a: &CsMat<f64>, shift: f64) -> Result<Self> {
        let (kl, ku) = bandwidth(a);
        Self::factor_with_bandwidth(a, shift, kl, ku)
    }

    pub fn factor_with_bandwidth(a: &CsMat<f64>, shift: f64, kl: usize, ku: usize) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::InvalidInput("band LU: matrix must be square".into()));
        }
        let ldab = 2 * kl + ku + 1;
        let mut ab = vec![0.0; ldab * n];
        for (&v, (i, j)) in a.iter() {
            if i > j + kl || j > i + ku {
                return Err(Error::InvalidInput("band LU: entry outside declared band".into()));
            }
            ab[j * ldab + kl + ku + i - j] += v;
        }
        if shift != 0.0 {
            for j in 0..n {
                ab[j * ldab + kl + ku] += shift;
            }
        }
        let mut ipiv = vec![0 as c_int; n];
        let mut info: c_int = 0;
        let ni = n as c_int;
        unsafe {
            lapack_sys::dgbtrf_(
                &ni,
                &ni,
                &(kl as c_int),
                &(ku as c_int),
                ab.as_mut_ptr(),
                &(ldab as c_int),
                ipiv.as_mut_ptr(),
                &mut info,
            );
        }
        check("dgbtrf", info)?;
        Ok(BandLu {
            n,
            kl,
            ku,
            ab,
            ipiv,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn solve_buf(&self, transpose: bool, buf: &mut [f64], nrhs: usize) -> Result<()> {
        let trans = if transpose { b'T' } else { b'N' } as c_char;
        let mut info: c_int = 0;
        let ldab = 2 * self.kl + self.ku + 1;
        unsafe {
            lapack_sys::dgbtrs_(
                &trans,
                &(self.n as c_int),
                &(self.kl as c_int),
                &(self.ku as c_int),
                &(nrhs as c_int),
                self.ab.as_ptr(),
                &(ldab as c_int),
                self.ipiv.as_ptr(),
                buf.as_mut_ptr(),
                &(self.n.max(1) as c_int),
                &mut info,
            );
        }
        check("dgbtrs", info)
    }

    /// Solves `(A + shift I) x = b`, or the transposed system.
    pub fn solve_vec(&self, transpose: bool, b: &Array1<f64>) -> Result<Array1<f64>> {
        let mut buf = b.to_vec();
        self.solve_buf(transpose, &mut buf, 1)?;
        Ok(Array1::from(buf))
    }

    pub fn solve_mat(&self, transpose: bool, b: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let nrhs = b.ncols();
        let mut buf = to_col_major(b);
        self.solve_buf(transpose, &mut buf, nrhs)?;
        Ok(from_col_major(self.n, nrhs, buf))
    }
}

pub fn frobenius(a: &ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn symmetrize(a: &Array2<f64>) -> Array2<f64> {
    (a + &a.t()) * 0.5
}

/// Relative asymmetry `max|A − Aᵀ| / max(1, max|A|)`.
pub fn asymmetry(a: &ArrayView2<f64>) -> f64 {
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst / scale
}

/// Orthonormal basis (thin QR) of the columns of `a`.
pub fn orthonormal_columns(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let (q, _) = a.to_owned().qr()?;
    Ok(q)
}

/// Largest real part over the eigenvalues of a dense square matrix.
pub fn spectral_abscissa(a: &ArrayView2<f64>) -> Result<f64> {
    if a.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let (vals, _) = a.to_owned().eig()?;
    Ok(vals.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Dense copy of a sparse matrix.
pub fn sparse_to_dense(a: &CsMat<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.rows(), a.cols()));
    for (&v, (i, j)) in a.iter() {
        out[[i, j]] += v;
    }
    out
}

/// `A·X` for sparse `A` and dense `X`.
pub fn sparse_mul_dense(a: &CsMat<f64>, x: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.rows(), x.ncols()));
    for (i, row) in a.outer_iterator().enumerate() {
        let mut out_row = out.row_mut(i);
        for (j, &v) in row.iter() {
            out_row.scaled_add(v, &x.row(j));
        }
    }
    out
}

/// `Aᵀ·X` for sparse (CSR) `A` and dense `X`.
pub fn sparse_t_mul_dense(a: &CsMat<f64>, x: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.cols(), x.ncols()));
    for (i, row) in a.outer_iterator().enumerate() {
        let xi = x.row(i);
        for (j, &v) in row.iter() {
            out.row_mut(j).scaled_add(v, &xi);
        }
    }
    out
}

pub fn sparse_mul_vec(a: &CsMat<f64>, x: &ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.rows());
    for (i, row) in a.outer_iterator().enumerate() {
        out[i] = row.iter().map(|(j, &v)| v * x[j]).sum();
    }
    out
}

pub fn sparse_t_mul_vec(a: &CsMat<f64>, x: &ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.cols());
    for (i, row) in a.outer_iterator().enumerate() {
        let xi = x[i];
        for (j, &v) in row.iter() {
            out[j] += v * xi;
        }
    }
    out
}

/// Solves `A X = B` through one LU factorization; also returns the reciprocal
/// 1-norm condition estimate of `A`.
pub fn solve_dense(a: &Array2<f64>, b: &ArrayView2<f64>) -> Result<(Array2<f64>, f64)> {
    let lu = a.factorize()?;
    let rcond = lu.rcond()?;
    let mut x = Array2::zeros(b.raw_dim());
    for (j, col) in b.axis_iter(Axis(1)).enumerate() {
        x.column_mut(j).assign(&lu.solve(&col.to_owned())?);
    }
    Ok((x, rcond))
}

/// Upper bound on the spectrum of the symmetric part `(A + Aᵀ)/2` by Gershgorin discs.
pub fn symmetric_part_gershgorin_bound(a: &CsMat<f64>) -> f64 {
    let n = a.rows();
    let mut diag = vec![0.0; n];
    let mut radius = vec![0.0; n];
    for (&v, (i, j)) in a.iter() {
        if i == j {
            diag[i] += v;
        } else {
            radius[i] += 0.5 * v.abs();
            radius[j] += 0.5 * v.abs();
        }
    }
    (0..n)
        .map(|i| diag[i] + radius[i])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Stack blocks horizontally.
pub fn hstack(blocks: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
    Ok(ndarray::concatenate(Axis(1), blocks)?)
}

/// Leading `k × k` block extraction helper.
pub fn leading_block(a: &Array2<f64>, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Array2<f64> {
    a.slice(s![rows, cols]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use sprs::TriMat;

    #[test]
    fn ordered_schur_puts_stable_block_first() {
        let a = array![[3.0, 1.0, 0.0], [0.0, -2.0, 1.0], [0.0, 0.0, -1.0]];
        let s = ordered_schur(&a.view(), HalfPlane::Left).unwrap();
        assert_eq!(s.selected, 2);
        assert!(s.t[[0, 0]] < 0.0 && s.t[[1, 1]] < 0.0);
        let back = s.z.dot(&s.t).dot(&s.z.t());
        assert!(frobenius(&(&back - &a).view()) < 1e-12);
    }

    #[test]
    fn band_lu_matches_dense_solve() {
        let n = 12;
        let mut tri = TriMat::new((n, n));
        for i in 0..n {
            tri.add_triplet(i, i, 4.0 + i as f64);
            if i + 3 < n {
                tri.add_triplet(i, i + 3, -1.0);
                tri.add_triplet(i + 3, i, 0.5);
            }
            if i + 1 < n {
                tri.add_triplet(i + 1, i, 2.0);
            }
        }
        let a: CsMat<f64> = tri.to_csr();
        let lu = BandLu::factor(&a, -0.3).unwrap();
        let b = Array1::from_iter((0..n).map(|i| (i as f64).sin()));
        let x = lu.solve_vec(false, &b).unwrap();
        let dense = sparse_to_dense(&a) - Array2::<f64>::eye(n) * 0.3;
        assert!((dense.dot(&x) - &b).iter().all(|r| r.abs() < 1e-12));
        let xt = lu.solve_vec(true, &b).unwrap();
        assert!((dense.t().dot(&xt) - &b).iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn pivoted_qr_picks_dominant_column_first() {
        let a = array![[1.0, 10.0, 0.0], [0.0, 0.0, 2.0]];
        let order = pivoted_qr_order(&a.view()).unwrap();
        assert_eq!(order[0], 1);
        assert_eq!(order[1], 2);
    }
}
