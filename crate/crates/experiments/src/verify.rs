//! Randomized property suites behind `sdre-rom verify` and the acceptance gate.

use std::time::Instant;

use ndarray::{s, Array1, Array2};
use ndarray_linalg::{c64, Eig, LeastSquaresSvd, QR, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sdre_core::identification::{blr_update, covariance_growth, ParameterPosterior};
use sdre_core::riccati::{care_residual, residual_tolerance, solve_are_dense, AreProblem};
use sdre_core::rom::{build_deim, RankSelection};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {}: {} ({:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Shift applied to the random state matrix.
pub const SPECTRAL_SHIFT: f64 = 0.5;

/// Minimum of `σ_min([A − λI, B])` over unstable eigenvalues `λ` accepted by the generator.
pub const STABILIZABILITY_MARGIN: f64 = 0.1;

/// Smallest PBH singular value over the eigenvalues of `a` with non-negative real part.
pub fn stabilizability_margin(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let k = a.nrows();
    let Ok((vals, _)) = a.eig() else {
        return 0.0;
    };
    let mut margin = f64::INFINITY;
    for lambda in vals.iter().filter(|z| z.re >= 0.0) {
        let pbh = Array2::from_shape_fn((k, k + b.ncols()), |(i, j)| {
            if j < k {
                c64::new(a[[i, j]], 0.0) - if i == j { *lambda } else { c64::new(0.0, 0.0) }
            } else {
                c64::new(b[[i, j - k]], 0.0)
            }
        });
        let smallest = pbh
            .svd(false, false)
            .map(|(_, sv, _)| sv.iter().copied().fold(f64::INFINITY, f64::min))
            .unwrap_or(0.0);
        margin = margin.min(smallest);
    }
    margin
}

/// Random instance with unstable modes controllable with margin at least
/// [`STABILIZABILITY_MARGIN`] and `(C, A)` observable almost surely.
pub fn random_are_instance(k: usize, rng: &mut ChaCha8Rng) -> AreProblem {
    loop {
        let m = rng.random_range(1..=k.div_ceil(4).max(1));
        let p = rng.random_range(1..=k.div_ceil(4).max(1));
        let a = gaussian(k, k, rng) / (k as f64).sqrt() - Array2::<f64>::eye(k) * SPECTRAL_SHIFT;
        let b = gaussian(k, m, rng);
        let c = gaussian(p, k, rng);
        let l = gaussian(m, m, rng);
        if stabilizability_margin(&a, &b) < STABILIZABILITY_MARGIN {
            continue;
        }
        let q = c.t().dot(&c);
        let r = l.t().dot(&l) + Array2::<f64>::eye(m);
        return AreProblem::new(a, b, q, r).expect("generated instance is well formed");
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreSuite {
    pub instances: usize,
    pub failures: usize,
    /// Largest `residual / (1e-8·max(1, ‖Q‖_F))`.
    pub worst_residual_ratio: f64,
    /// Largest real part of a closed-loop eigenvalue.
    pub worst_abscissa: f64,
    /// `|π − (1 + √2)|` for `a = b = q = r = 1`.
    pub scalar_error: f64,
}

impl AreSuite {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.worst_residual_ratio <= 1.0 && self.worst_abscissa < 0.0 && self.scalar_error <= 1e-12
    }
}

pub fn are_suite(instances: usize, seed: u64) -> AreSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = AreSuite {
        instances,
        failures: 0,
        worst_residual_ratio: 0.0,
        worst_abscissa: f64::NEG_INFINITY,
        scalar_error: f64::INFINITY,
    };
    for _ in 0..instances {
        let k = rng.random_range(2..=50);
        let p = random_are_instance(k, &mut rng);
        let Ok(gain) = solve_are_dense(&p) else {
            out.failures += 1;
            continue;
        };
        let pi = gain.pi.dense();
        let q_norm = p.q.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.worst_residual_ratio = out.worst_residual_ratio.max(care_residual(&p, &pi) / residual_tolerance(q_norm));
        let closed = &p.a - &p.b.dot(&gain.k);
        match closed.eig() {
            Ok((vals, _)) => {
                let abscissa = vals.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
                out.worst_abscissa = out.worst_abscissa.max(abscissa);
            }
            Err(_) => out.failures += 1,
        }
    }
    let one = || Array2::<f64>::ones((1, 1));
    if let Ok(gain) = AreProblem::new(one(), one(), one(), one()).and_then(|p| solve_are_dense(&p)) {
        out.scalar_error = (gain.pi.dense()[[0, 0]] - (1.0 + 2f64.sqrt())).abs();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeimSuite {
    pub vectors: usize,
    /// Largest `max_{i∈P} |f̂ᵢ − fᵢ| / ‖f‖_∞` over random vectors.
    pub worst_sampled: f64,
    /// Largest `‖f̂ − f‖_∞ / ‖f‖_∞` over vectors in `span(Φ)`.
    pub worst_in_span: f64,
}

impl DeimSuite {
    pub fn passed(&self) -> bool {
        self.worst_sampled <= 1e-10 && self.worst_in_span <= 1e-10
    }
}

fn inf_norm(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn deim_suite(vectors: usize, seed: u64) -> DeimSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, n, ell) = (400, 60, 25);
    let (u, _) = gaussian(d, n, &mut rng).qr().expect("QR of a Gaussian matrix");
    let (v, _) = gaussian(n, n, &mut rng).qr().expect("QR of a Gaussian matrix");
    let decay = Array2::from_diag(&Array1::from_shape_fn(n, |i| 10f64.powf(-(i as f64) / 6.0)));
    let snapshots = u.dot(&decay).dot(&v.t());
    let deim = build_deim(&snapshots, RankSelection::Fixed(ell)).expect("DEIM of a full-rank snapshot set");
    let mut out = DeimSuite {
        vectors,
        worst_sampled: 0.0,
        worst_in_span: 0.0,
    };
    for _ in 0..vectors {
        let f: Array1<f64> = Array1::from_shape_fn(d, |_| StandardNormal.sample(&mut rng));
        let rec = deim.reconstruct(&f).expect("reconstruction");
        let sampled = deim.indices.iter().map(|&i| (rec[i] - f[i]).abs()).fold(0.0, f64::max);
        out.worst_sampled = out.worst_sampled.max(sampled / inf_norm(&f));

        let coef: Array1<f64> = Array1::from_shape_fn(deim.len(), |_| StandardNormal.sample(&mut rng));
        let g = deim.phi.dot(&coef);
        let rec = deim.reconstruct(&g).expect("reconstruction");
        out.worst_in_span = out.worst_in_span.max(inf_norm(&(&rec - &g)) / inf_norm(&g));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlrSuite {
    pub systems: usize,
    /// Largest `‖μ̃⁺ − μ_LS‖ / ‖μ_LS‖`.
    pub worst_ols_error: f64,
    /// Updates where the largest eigenvalue of `Σ⁺ − Σ` exceeded rounding.
    pub contraction_violations: usize,
    pub updates: usize,
}

impl BlrSuite {
    pub fn passed(&self) -> bool {
        self.worst_ols_error <= 1e-6 && self.contraction_violations == 0
    }
}

pub fn blr_suite(systems: usize, seed: u64) -> BlrSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BlrSuite {
        systems,
        worst_ols_error: 0.0,
        contraction_violations: 0,
        updates: 0,
    };
    for _ in 0..systems {
        let n = rng.random_range(2..=5);
        let rows = rng.random_range(3 * n..=200);
        let x = gaussian(rows, n, &mut rng);
        let truth = gaussian(n, 1, &mut rng).column(0).to_owned() * 10.0;
        let noise: Array1<f64> = Array1::from_shape_fn(rows, |_| StandardNormal.sample(&mut rng));
        let y = x.dot(&truth) + noise * 0.1;
        let prior = ParameterPosterior::isotropic(Array1::ones(n), 1e6).expect("isotropic prior");
        let post = blr_update(&prior, &x, &y, 1.0).expect("posterior update");
        let ls = x.least_squares(&y).expect("least squares").solution;
        let err = (&post.mean - &ls).dot(&(&post.mean - &ls)).sqrt() / ls.dot(&ls).sqrt();
        out.worst_ols_error = out.worst_ols_error.max(err);

        // Sequential batches of the same system.
        let mut current = prior;
        let batch = rows / 3;
        for b in 0..3 {
            let xs = x.slice(s![b * batch..(b + 1) * batch, ..]).to_owned();
            let ys = y.slice(s![b * batch..(b + 1) * batch]).to_owned();
            let next = blr_update(&current, &xs, &ys, 1.0).expect("posterior update");
            let scale = current.cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let growth = covariance_growth(&current.cov, &next.cov).expect("eigenvalues");
            out.updates += 1;
            if growth > 1e-10 * scale {
                out.contraction_violations += 1;
            }
            current = next;
        }
    }
    out
}

/// Property suites for `sdre-rom verify`.
pub fn verify(config: &ExperimentConfig) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut timed = |name: &str, f: &mut dyn FnMut() -> (bool, String)| {
        let clock = Instant::now();
        let (passed, detail) = f();
        results.push(CheckResult {
            name: name.to_string(),
            passed,
            detail,
            seconds: clock.elapsed().as_secs_f64(),
        });
    };
    timed("config round trip", &mut || {
        let again = ExperimentConfig::from_toml(&config.to_toml());
        match again {
            Ok(c) => (c == *config, "parse(serialize(config)) == config".to_string()),
            Err(e) => (false, e.to_string()),
        }
    });
    timed("ARE residual and stability", &mut || {
        let s = are_suite(200, config.noise.seed);
        (
            s.passed(),
            format!(
                "{} instances, failures {}, worst residual/tol {:.2e}, worst abscissa {:.2e}, scalar error {:.1e}",
                s.instances, s.failures, s.worst_residual_ratio, s.worst_abscissa, s.scalar_error
            ),
        )
    });
    timed("DEIM interpolation", &mut || {
        let s = deim_suite(100, config.noise.seed);
        (
            s.passed(),
            format!("sampled error {:.2e}, in-span error {:.2e}", s.worst_sampled, s.worst_in_span),
        )
    });
    timed("BLR least-squares limit and contraction", &mut || {
        let s = blr_suite(50, config.noise.seed);
        (
            s.passed(),
            format!(
                "worst OLS relative error {:.2e}, contraction violations {}/{}",
                s.worst_ols_error, s.contraction_violations, s.updates
            ),
        )
    });
    timed("model assembly", &mut || match crate::Experiment::new(config.clone()) {
        Ok(exp) => {
            let rank = exp.model.cost.rank();
            let regions = config.model.observation.len();
            (rank == regions, format!("d = {}, cost rank {rank} for {regions} regions", exp.model.dim()))
        }
        Err(e) => (false, e.to_string()),
    });
    results
}
