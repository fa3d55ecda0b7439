use ndarray::{concatenate, s, Array2, Axis};
use ndarray_linalg::Inverse;

use super::{AreProblem, FeedbackGain, RiccatiSolution};
use crate::error::{Error, Result};
use crate::linalg::{
    frobenius, ordered_schur, quasi_triangular_sylvester, solve_dense, spectral_abscissa,
    symmetrize, HalfPlane,
};

/// `‖AᵀΠ + ΠA − ΠBR⁻¹BᵀΠ + Q‖_F`.
pub fn care_residual(p: &AreProblem, pi: &Array2<f64>) -> f64 {
    let r_inv = p.r.inv().expect("validated control weight is invertible");
    let g = p.b.dot(&r_inv).dot(&p.b.t());
    let res = p.a.t().dot(pi) + pi.dot(&p.a) - pi.dot(&g).dot(pi) + &p.q;
    frobenius(&res.view())
}

/// Residual tolerance `1e−8·max(1, ‖Q‖_F)` every returned solution must satisfy.
pub fn residual_tolerance(q_norm: f64) -> f64 {
    1e-8 * q_norm.max(1.0)
}

fn gain_from(p: &AreProblem, pi: &Array2<f64>) -> Result<Array2<f64>> {
    let (k, _) = solve_dense(&p.r, &p.b.t().dot(pi).view())?;
    Ok(k)
}

/// Stabilizing ARE solution from the stable invariant subspace of the Hamiltonian.
pub fn solve_are_dense(p: &AreProblem) -> Result<FeedbackGain> {
    let n = p.dim();
    let r_inv = p.r.inv()?;
    let g = p.b.dot(&r_inv).dot(&p.b.t());
    let (q_norm, g_norm) = (frobenius(&p.q.view()), frobenius(&g.view()));
    // Work with Π = c·Π̃ so the two off-diagonal Hamiltonian blocks have equal norm.
    let c = if q_norm > 0.0 && g_norm > 0.0 {
        (q_norm / g_norm).sqrt()
    } else {
        1.0
    };
    let top = concatenate![Axis(1), p.a, g.mapv(|v| -c * v)];
    let bottom = concatenate![Axis(1), p.q.mapv(|v| -v / c), p.a.t().mapv(|v| -v)];
    let h = concatenate![Axis(0), top, bottom];
    let schur = ordered_schur(&h.view(), HalfPlane::Left)?;
    if schur.selected != n {
        return Err(Error::NoStabilizingSolution(format!(
            "Hamiltonian has {} stable eigenvalues, expected {n}",
            schur.selected
        )));
    }
    let u1 = schur.z.slice(s![..n, ..n]).to_owned();
    let u2 = schur.z.slice(s![n.., ..n]);
    // Π̃ = U₂U₁⁻¹, obtained from U₁ᵀΠ̃ᵀ = U₂ᵀ.
    let (pi_t, rcond) = solve_dense(&u1.t().to_owned(), &u2.t())?;
    if !(rcond > 1e-14) {
        return Err(Error::NoStabilizingSolution(format!(
            "stable subspace basis U1 is singular (rcond {rcond:.2e})"
        )));
    }
    let mut pi = symmetrize(&pi_t) * c;
    let tol = residual_tolerance(q_norm);
    let mut residual = care_residual(p, &pi);
    // Newton corrections in residual form recover accuracy lost to Hamiltonian conditioning;
    // a correction is kept only if it lowers the residual.
    let mut refinements = 0;
    while residual > tol && refinements < 3 {
        refinements += 1;
        let f = &p.a - &g.dot(&pi);
        let res = p.a.t().dot(&pi) + pi.dot(&p.a) - pi.dot(&g).dot(&pi) + &p.q;
        let Ok(delta) = solve_lyapunov_dense(&f, &res) else {
            break;
        };
        let next = symmetrize(&(&pi + &delta));
        let next_residual = care_residual(p, &next);
        if !(next_residual < residual) {
            break;
        }
        pi = next;
        residual = next_residual;
    }
    if !(residual <= tol) {
        return Err(Error::NoStabilizingSolution(format!(
            "ARE residual {residual:.3e} exceeds {tol:.3e}"
        )));
    }
    let k = gain_from(p, &pi)?;
    let abscissa = spectral_abscissa(&(&p.a - &p.b.dot(&k)).view())?;
    if !(abscissa < 0.0) {
        return Err(Error::NoStabilizingSolution(format!(
            "closed loop not stable (spectral abscissa {abscissa:.3e})"
        )));
    }
    Ok(FeedbackGain {
        k,
        pi: RiccatiSolution::Dense(pi),
    })
}

/// Solves `FᵀX + XF = −W` (Bartels–Stewart on the real Schur form of `F`).
pub fn solve_lyapunov_dense(f: &Array2<f64>, w: &Array2<f64>) -> Result<Array2<f64>> {
    let schur = ordered_schur(&f.view(), HalfPlane::Left)?;
    let u = &schur.z;
    let c = -u.t().dot(w).dot(u);
    let y = quasi_triangular_sylvester(&schur.t.view(), true, &schur.t.view(), false, 1, &c.view())
        .map_err(|e| Error::Lyapunov(e.to_string()))?;
    let x = u.dot(&y).dot(&u.t());
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Lyapunov("non-finite solution".into()));
    }
    Ok(symmetrize(&x))
}

/// Outcome of a Newton–Kleinman solve with its per-iteration ARE residuals.
#[derive(Debug, Clone)]
pub struct NewtonKleinmanRun {
    pub gain: FeedbackGain,
    pub residuals: Vec<f64>,
    pub increments: Vec<f64>,
}

/// Newton–Kleinman iteration from a stabilizing gain `k0` (dense Lyapunov solves).
pub fn newton_kleinman(p: &AreProblem, k0: &Array2<f64>, max_iters: usize) -> Result<NewtonKleinmanRun> {
    let abscissa = spectral_abscissa(&(&p.a - &p.b.dot(k0)).view())?;
    if !(abscissa < 0.0) {
        return Err(Error::UnstableInitialGain(format!(
            "spectral abscissa of A − BK0 is {abscissa:.3e}"
        )));
    }
    let mut k = k0.clone();
    let mut residuals = Vec::new();
    let mut increments = Vec::new();
    for _ in 0..max_iters {
        let f = &p.a - &p.b.dot(&k);
        let w = &p.q + &k.t().dot(&p.r).dot(&k);
        let pi = solve_lyapunov_dense(&f, &w)?;
        let next = gain_from(p, &pi)?;
        let increment = frobenius(&(&next - &k).view());
        residuals.push(care_residual(p, &pi));
        increments.push(increment);
        k = next;
        if increment <= 1e-10 * frobenius(&k.view()).max(1.0) {
            let tol = residual_tolerance(frobenius(&p.q.view()));
            let residual = care_residual(p, &pi);
            if residual > tol {
                return Err(Error::NoStabilizingSolution(format!(
                    "Newton–Kleinman stalled at residual {residual:.3e}"
                )));
            }
            return Ok(NewtonKleinmanRun {
                gain: FeedbackGain {
                    k,
                    pi: RiccatiSolution::Dense(pi),
                },
                residuals,
                increments,
            });
        }
    }
    Err(Error::NoStabilizingSolution(format!(
        "Newton–Kleinman did not converge in {max_iters} iterations"
    )))
}
