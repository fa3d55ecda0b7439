use std::f64::consts::PI;

use ndarray::Array1;
use ndarray_linalg::{Eigh, UPLO};
use proptest::prelude::*;

use sdre_core::linalg::sparse_to_dense;
use sdre_core::pde::*;

fn geometry() -> ModelGeometry {
    ModelGeometry::benchmark(1e-2)
}

#[test]
fn laplacian_stencil_and_corner_rows() {
    let grid = GridSpec::square(5).unwrap(); // 3×3 interior, h = 1/4
    let lap = sparse_to_dense(&build_dirichlet_laplacian(&grid));
    let h2 = grid.h1 * grid.h1;
    let centre = grid.index(2, 2).unwrap();
    assert!((lap[[centre, centre]] + 4.0 / h2).abs() < 1e-12);
    let row_sum = |k: usize| lap.row(k).sum();
    assert!((row_sum(centre)).abs() < 1e-9);
    let corner = grid.index(1, 1).unwrap();
    assert!((row_sum(corner) + 2.0 / h2).abs() < 1e-9);
    assert_eq!(lap, lap.t());
}

#[test]
fn laplacian_spectrum_matches_closed_form() {
    let n = 12;
    let grid = GridSpec::square(n).unwrap();
    let lap = sparse_to_dense(&build_dirichlet_laplacian(&grid));
    let (mut computed, _) = lap.eigh(UPLO::Lower).unwrap();
    let h = grid.h1;
    let mut expected = Vec::new();
    for k in 1..=n - 2 {
        for l in 1..=n - 2 {
            let (sk, sl) = ((k as f64 * PI * h / 2.0).sin(), (l as f64 * PI * h / 2.0).sin());
            expected.push(-(4.0 / (h * h)) * (sk * sk + sl * sl));
        }
    }
    expected.sort_by(f64::total_cmp);
    computed.as_slice_mut().unwrap().sort_by(f64::total_cmp);
    for (c, e) in computed.iter().zip(&expected) {
        assert!(((c - e) / e).abs() < 1e-10, "{c} vs {e}");
    }
    assert!(computed.iter().all(|&v| v < 0.0));
}

#[test]
fn actuator_membership() {
    let grid = GridSpec::square(41).unwrap();
    let model = allen_cahn_model(&grid, &geometry()).unwrap();
    let at = |a: f64, b: f64| {
        let k = (0..grid.dim())
            .find(|&k| {
                let (x, y) = grid.coords(k);
                (x - a).abs() < 1e-12 && (y - b).abs() < 1e-12
            })
            .unwrap();
        model.actuator[[k, 0]]
    };
    assert_eq!(at(0.2, 0.2), 1.0);
    assert_eq!(at(0.5, 0.5), 0.0);

    let boxes = [(0.1, 0.3, 0.1, 0.3), (0.7, 0.9, 0.7, 0.9), (0.1, 0.3, 0.7, 0.9), (0.7, 0.9, 0.1, 0.3)];
    let mut brute = 0;
    for i in 1..grid.n1 - 1 {
        for j in 1..grid.n2 - 1 {
            let (x, y) = (i as f64 * grid.h1, j as f64 * grid.h2);
            if boxes
                .iter()
                .any(|&(a, b, c, d)| x >= a - 1e-9 && x <= b + 1e-9 && y >= c - 1e-9 && y <= d + 1e-9)
            {
                brute += 1;
            }
        }
    }
    assert_eq!(model.actuator.sum() as usize, brute);
    // 9 nodes per direction per box on the 41-node grid.
    assert_eq!(brute, 4 * 81);
}

#[test]
fn empty_actuator_rejected() {
    let grid = GridSpec::square(11).unwrap();
    let mut geom = geometry();
    geom.actuator = vec![BoxRegion::new(0.01, 0.02, 0.01, 0.02)];
    assert!(matches!(allen_cahn_model(&grid, &geom), Err(sdre_core::Error::ActuatorEmpty)));
}

#[test]
fn cost_of_constant_field_converges_to_region_area_sum() {
    let errs: Vec<f64> = [41, 161]
        .iter()
        .map(|&n| {
            let grid = GridSpec::square(n).unwrap();
            let model = allen_cahn_model(&grid, &geometry()).unwrap();
            let ones = Array1::ones(grid.dim());
            (model.cost.quadratic(&ones.view()) - 0.16).abs()
        })
        .collect();
    // Closed boxes over-count edge nodes, an O(h) effect: four times finer, about four times smaller.
    let ratio = errs[0] / errs[1];
    assert!((3.0..6.0).contains(&ratio), "{errs:?}");
}

#[test]
fn cost_rank_and_dense_agreement() {
    let grid = GridSpec::square(22).unwrap();
    let model = allen_cahn_model(&grid, &geometry()).unwrap();
    assert_eq!(model.cost.rank(), 4);
    let dense = model.cost.dense();
    let (vals, _) = dense.eigh(UPLO::Lower).unwrap();
    let top = vals.iter().copied().fold(0.0, f64::max);
    assert_eq!(vals.iter().filter(|&&v| v > 1e-12 * top).count(), 4);
    assert!(vals.iter().all(|&v| v > -1e-14));
    let x = Array1::from_shape_fn(grid.dim(), |k| (k as f64 * 0.37).sin());
    assert!((model.cost.quadratic(&x.view()) - x.dot(&dense.dot(&x))).abs() < 1e-12);
    assert_eq!(model.cost.quadratic(&Array1::zeros(grid.dim()).view()), 0.0);
}

#[test]
fn initial_condition_peak() {
    let grid = GridSpec::square(41).unwrap();
    let x0 = initial_condition(&grid);
    let centre = grid.index(20, 20).unwrap();
    assert!((x0[centre] - 0.2).abs() < 1e-15);
    let max = x0.iter().copied().fold(f64::MIN, f64::max);
    assert_eq!(max, x0[centre]);
}

fn random_state(d: usize, seed: u64) -> Array1<f64> {
    Array1::from_shape_fn(d, |k| ((k as f64 + 1.0) * (seed as f64 + 0.618)).sin() * 0.4)
}

#[test]
fn allen_cahn_pointwise_oracle() {
    let grid = GridSpec::square(17).unwrap();
    let model = allen_cahn_model(&grid, &geometry()).unwrap();
    let mu = [0.5, 11.0, -11.0];
    let x = random_state(grid.dim(), 3);
    let f = model.drift(&x, &mu);
    let (c1, c2) = (1.0 / (grid.h1 * grid.h1), 1.0 / (grid.h2 * grid.h2));
    for k in 0..grid.dim() {
        let [w, e, s, n] = grid.neighbours(k);
        let v = |o: Option<usize>| o.map_or(0.0, |i| x[i]);
        let lap = c1 * (v(w) + v(e) - 2.0 * x[k]) + c2 * (v(s) + v(n) - 2.0 * x[k]);
        let direct = mu[0] * lap + mu[1] * x[k] + mu[2] * x[k].powi(3);
        assert!((f[k] - direct).abs() <= 1e-12 * direct.abs().max(1.0), "node {k}");
    }
}

#[test]
fn zero_state_kills_state_dependent_terms() {
    let grid = GridSpec::square(9).unwrap();
    let zero = Array1::zeros(grid.dim());
    let ac = allen_cahn_model(&grid, &geometry()).unwrap();
    assert_eq!(ac.terms[2].matrix(&zero).nnz_by(|v| *v != 0.0), 0);
    let adv = advection_model(&grid, &geometry()).unwrap();
    assert_eq!(adv.terms[1].apply(&zero), zero);
    // exp(0) = 1 on the diagonal.
    let diag = sparse_to_dense(&adv.terms[2].matrix(&zero));
    assert_eq!(diag, ndarray::Array2::eye(grid.dim()));
}

trait CountNonzero {
    fn nnz_by(&self, f: impl Fn(&f64) -> bool) -> usize;
}

impl CountNonzero for sprs::CsMat<f64> {
    fn nnz_by(&self, f: impl Fn(&f64) -> bool) -> usize {
        self.data().iter().filter(|v| f(v)).count()
    }
}

#[test]
fn upwind_converges_at_first_order() {
    // y = sin(πξ₁)sin(πξ₂); exact y(y_{ξ₁}+y_{ξ₂}).
    let errors: Vec<f64> = [21, 41, 81]
        .iter()
        .map(|&n| {
            let grid = GridSpec::square(n).unwrap();
            let x = Array1::from_iter((0..grid.dim()).map(|k| {
                let (a, b) = grid.coords(k);
                (PI * a).sin() * (PI * b).sin()
            }));
            let t = OperatorTerm::Upwind(UpwindAdvection { grid });
            let approx = t.apply(&x);
            (0..grid.dim())
                .map(|k| {
                    let (a, b) = grid.coords(k);
                    let y = (PI * a).sin() * (PI * b).sin();
                    let exact = y * PI * ((PI * a).cos() * (PI * b).sin() + (PI * a).sin() * (PI * b).cos());
                    (approx[k] - exact).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    for w in errors.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!((0.8..1.3).contains(&rate), "rate {rate}, errors {errors:?}");
    }
}

#[test]
fn upwind_row_follows_sign_of_state() {
    let grid = GridSpec::square(7).unwrap();
    let t = OperatorTerm::Upwind(UpwindAdvection { grid });
    let k = grid.index(3, 3).unwrap();
    let [w, e, s, n] = grid.neighbours(k).map(Option::unwrap);
    let mut x = Array1::from_shape_fn(grid.dim(), |i| 0.1 * i as f64);
    let dense = |x: &Array1<f64>| sparse_to_dense(&t.matrix(x));
    x[k] = 0.5;
    let m = dense(&x);
    assert!(m[[k, w]] < 0.0 && m[[k, s]] < 0.0 && m[[k, e]] == 0.0 && m[[k, n]] == 0.0);
    x[k] = -0.5;
    let m = dense(&x);
    assert!(m[[k, e]] < 0.0 && m[[k, n]] < 0.0 && m[[k, w]] == 0.0 && m[[k, s]] == 0.0);
}

#[test]
fn jacobian_matches_finite_difference() {
    let grid = GridSpec::square(9).unwrap();
    for model in [
        allen_cahn_model(&grid, &geometry()).unwrap(),
        advection_model(&grid, &geometry()).unwrap(),
    ] {
        let mu = [0.3, 1.7, -2.0];
        let x = random_state(grid.dim(), 11);
        let jac = sparse_to_dense(&model.jacobian(&x, &mu));
        let eps = 1e-7;
        for j in [0, 7, 20, grid.dim() - 1] {
            let mut xp = x.clone();
            xp[j] += eps;
            let mut xm = x.clone();
            xm[j] -= eps;
            let col = (model.drift(&xp, &mu) - model.drift(&xm, &mu)) / (2.0 * eps);
            for i in 0..grid.dim() {
                assert!((col[i] - jac[[i, j]]).abs() < 1e-5 * jac[[i, j]].abs().max(1.0), "({i},{j})");
            }
        }
    }
}

#[test]
fn small_grid_rejected() {
    assert!(GridSpec::new(2, 5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn operator_is_linear_in_parameters(
        mu in proptest::collection::vec(-5.0f64..5.0, 3),
        nu in proptest::collection::vec(-5.0f64..5.0, 3),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
        seed in 0u64..1000,
        advection in any::<bool>(),
    ) {
        let grid = GridSpec::square(8).unwrap();
        let model = if advection { advection_model(&grid, &geometry()) } else { allen_cahn_model(&grid, &geometry()) }.unwrap();
        let x = random_state(grid.dim(), seed);
        let combo: Vec<f64> = mu.iter().zip(&nu).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = model.drift(&x, &combo);
        let rhs = model.drift(&x, &mu) * alpha + model.drift(&x, &nu) * beta;
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((l - r).abs() <= 1e-10 * (1.0 + l.abs().max(r.abs())));
        }
    }

    #[test]
    fn cost_is_positive_semidefinite(seed in 0u64..10_000) {
        let grid = GridSpec::square(10).unwrap();
        let model = allen_cahn_model(&grid, &geometry()).unwrap();
        let x = random_state(grid.dim(), seed) - 0.1;
        prop_assert!(model.cost.quadratic(&x.view()) >= 0.0);
    }

    #[test]
    fn node_index_is_bijection(n1 in 3usize..20, n2 in 3usize..20) {
        let grid = GridSpec::new(n1, n2).unwrap();
        for k in 0..grid.dim() {
            let (i, j) = grid.node(k);
            prop_assert_eq!(grid.index(i, j), Some(k));
        }
        prop_assert_eq!(grid.dim(), (n1 - 2) * (n2 - 2));
    }

    #[test]
    fn constant_terms_do_not_depend_on_state(seed in 0u64..1000) {
        let grid = GridSpec::square(7).unwrap();
        let model = allen_cahn_model(&grid, &geometry()).unwrap();
        let a = model.terms[0].matrix(&random_state(grid.dim(), seed));
        let b = model.terms[0].matrix(&Array1::zeros(grid.dim()));
        prop_assert_eq!(sparse_to_dense(&a), sparse_to_dense(&b));
        let diag = sparse_to_dense(&model.terms[2].matrix(&random_state(grid.dim(), seed)));
        for ((i, j), v) in diag.indexed_iter() {
            prop_assert!(i == j || *v == 0.0);
        }
    }
}
