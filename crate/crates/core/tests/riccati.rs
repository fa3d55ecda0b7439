use ndarray::{array, Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sdre_core::integrate::{simulate_trajectory, FullDynamics, NewtonOptions, TimeGrid};
use sdre_core::linalg::{frobenius, sparse_to_dense, spectral_abscissa};
use sdre_core::pde::*;
use sdre_core::riccati::*;

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Random problem with `A` shifted so the few unstable modes are well controllable.
fn random_problem(k: usize, m: usize, seed: u64) -> AreProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = gaussian(k, k, &mut rng) / (k as f64).sqrt() - Array2::<f64>::eye(k) * 0.8;
    let b = gaussian(k, m, &mut rng);
    let c = gaussian(3.min(k), k, &mut rng);
    let r = Array2::<f64>::eye(m) * rng.random_range(0.5..2.0);
    AreProblem::new(a, b, c.t().dot(&c), r).unwrap()
}

fn assert_valid(p: &AreProblem, gain: &FeedbackGain) {
    let pi = gain.pi.dense();
    let qn = frobenius(&p.q.view());
    assert!(care_residual(p, &pi) <= residual_tolerance(qn));
    assert!(spectral_abscissa(&(&p.a - &p.b.dot(&gain.k)).view()).unwrap() < 0.0);
    assert!(sdre_core::linalg::asymmetry(&pi.view()) <= 1e-12 * frobenius(&pi.view()).max(1.0));
}

fn rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    frobenius(&(a - b).view()) / frobenius(&b.view()).max(1e-300)
}

#[test]
fn scalar_closed_form() {
    let one = || array![[1.0]];
    let p = AreProblem::new(one(), one(), one(), one()).unwrap();
    let gain = solve_are_dense(&p).unwrap();
    let pi = gain.pi.dense()[[0, 0]];
    assert!((pi - (1.0 + 2f64.sqrt())).abs() <= 1e-12);
    assert!((1.0 - gain.k[[0, 0]] + 2f64.sqrt()).abs() <= 1e-12);
}

#[test]
fn zero_weight_on_stable_system_gives_zero() {
    let a = array![[-1.0, 2.0], [0.0, -3.0]];
    let p = AreProblem::new(a, array![[1.0], [1.0]], Array2::zeros((2, 2)), array![[1.0]]).unwrap();
    let gain = solve_are_dense(&p).unwrap();
    assert!(frobenius(&gain.pi.dense().view()) < 1e-12);
}

#[test]
fn zero_input_on_stable_system_gives_zero_gain() {
    let a = array![[-2.0, 1.0], [0.0, -1.0]];
    let p = AreProblem::new(a, Array2::zeros((2, 1)), Array2::eye(2), array![[1.0]]).unwrap();
    let gain = solve_are_dense(&p).unwrap();
    assert!(gain.k.iter().all(|v| v.abs() < 1e-14));
}

#[test]
fn random_instance_residual_and_spectrum() {
    for seed in 0..5 {
        let p = random_problem(20, 3, seed);
        let gain = solve_are_dense(&p).unwrap();
        assert_valid(&p, &gain);
        let (vals, _) = gain.pi.dense().eigh(UPLO::Lower).unwrap();
        assert!(vals.iter().all(|&v| v > -1e-10));
    }
}

#[test]
fn validation_rejects_bad_weights() {
    let a = Array2::<f64>::eye(2);
    let b = array![[1.0], [0.0]];
    assert!(AreProblem::new(a.clone(), b.clone(), array![[1.0, 0.5], [0.0, 1.0]], array![[1.0]]).is_err());
    assert!(AreProblem::new(a.clone(), b.clone(), Array2::eye(2), array![[-1.0]]).is_err());
    assert!(AreProblem::new(a, b, Array2::eye(3), array![[1.0]]).is_err());
}

#[test]
fn newton_kleinman_agrees_with_schur() {
    for seed in 10..14 {
        let p = random_problem(20, 2, seed);
        let exact = solve_are_dense(&p).unwrap();
        // A gain for a heavier state weight is stabilizing for this problem too.
        let heavier = AreProblem::new(p.a.clone(), p.b.clone(), &p.q * 4.0 + Array2::<f64>::eye(20), p.r.clone()).unwrap();
        let k0 = solve_are_dense(&heavier).unwrap().k;
        let nk = newton_kleinman(&p, &k0, 50).unwrap();
        assert!(rel(&nk.gain.pi.dense(), &exact.pi.dense()) < 1e-8);
        assert_valid(&p, &nk.gain);
    }
}

#[test]
fn newton_kleinman_fixed_point() {
    let p = random_problem(12, 2, 3);
    let exact = solve_are_dense(&p).unwrap();
    let nk = newton_kleinman(&p, &exact.k, 5).unwrap();
    assert!(nk.increments[0] <= 1e-12 * frobenius(&exact.k.view()).max(1.0), "{:?}", nk.increments);
}

#[test]
fn newton_kleinman_residuals_decrease() {
    let p = random_problem(50, 4, 21);
    let heavier = AreProblem::new(p.a.clone(), p.b.clone(), &p.q * 50.0 + Array2::<f64>::eye(50) * 10.0, p.r.clone()).unwrap();
    let k0 = solve_are_dense(&heavier).unwrap().k;
    let nk = newton_kleinman(&p, &k0, 50).unwrap();
    let floor = residual_tolerance(frobenius(&p.q.view()));
    let above: Vec<f64> = nk.residuals.iter().copied().take_while(|&r| r > floor).collect();
    assert!(above.len() >= 2, "{:?}", nk.residuals);
    assert!(above.windows(2).all(|w| w[1] < w[0]), "{:?}", nk.residuals);
}

#[test]
fn unstable_initial_gain_rejected() {
    let p = AreProblem::new(array![[1.0]], array![[1.0]], array![[1.0]], array![[1.0]]).unwrap();
    assert!(matches!(
        newton_kleinman(&p, &array![[0.0]], 10),
        Err(sdre_core::Error::UnstableInitialGain(_))
    ));
}

#[test]
fn weight_scaling_invariance() {
    let p = random_problem(10, 2, 5);
    let base = solve_are_dense(&p).unwrap();
    for alpha in [1e-3, 7.0, 1e3] {
        let scaled = AreProblem::new(p.a.clone(), p.b.clone(), &p.q * alpha, &p.r * alpha).unwrap();
        let g = solve_are_dense(&scaled).unwrap();
        assert!(rel(&g.k, &base.k) < 1e-9);
        assert!(rel(&g.pi.dense(), &(base.pi.dense() * alpha)) < 1e-9);
    }
}

fn small_model(benchmark: Benchmark, n: usize, r: f64) -> SemilinearModel {
    benchmark
        .build(&GridSpec::square(n).unwrap(), &ModelGeometry::benchmark(r))
        .unwrap()
}

#[test]
fn lqr_gain_stabilizes_linearization() {
    let model = small_model(Benchmark::AllenCahn, 12, 1e-2);
    let a = model.linearization(&[0.5, 11.0, -11.0]);
    let gain = lqr_gain(&a, &model.actuator, &model.cost, &model.control_weight, &SolverOptions::default()).unwrap();
    let closed = sparse_to_dense(&a) - model.actuator.dot(&gain.k);
    assert!(spectral_abscissa(&closed.view()).unwrap() < 0.0);
    assert!(spectral_abscissa(&sparse_to_dense(&a).view()).unwrap() > 0.0);
}

#[test]
fn low_rank_route_matches_dense() {
    let model = small_model(Benchmark::AllenCahn, 16, 1e-2);
    let a = model.linearization(&[0.5, 11.0, 0.0]);
    let dense = lqr_gain(&a, &model.actuator, &model.cost, &model.control_weight, &SolverOptions::default()).unwrap();
    let opts = SolverOptions {
        dense_threshold: 0,
        ..SolverOptions::default()
    };
    let mut solver = FullOrderSolver::new(opts);
    let low = solver.solve(&a, &model.actuator, &model.cost, &model.control_weight).unwrap();
    assert!(matches!(low.pi, RiccatiSolution::LowRank(_)));
    assert!(rel(&low.k, &dense.k) < 1e-6, "{}", rel(&low.k, &dense.k));
    assert_eq!(solver.cold_starts, 1);
    // A warm-started second solve needs no cold start.
    let a2 = model.linearization(&[0.5, 10.5, 0.0]);
    solver.solve(&a2, &model.actuator, &model.cost, &model.control_weight).unwrap();
    assert_eq!(solver.cold_starts, 1);

    let problem = SparseAreProblem {
        a: &a,
        b: &model.actuator,
        cost: &model.cost,
        r: &model.control_weight,
    };
    let RiccatiSolution::LowRank(z) = &low.pi else { unreachable!() };
    let tol = residual_tolerance(model.cost.frobenius());
    assert!(low_rank_care_residual(&problem, z) <= 10.0 * tol);
}

#[test]
fn partial_stabilization_moves_unstable_modes() {
    let model = small_model(Benchmark::AllenCahn, 14, 1e-2);
    let a = model.linearization(&[0.2154, 7.5, 0.0]);
    let k0 = stabilizing_gain(&a, &model.actuator, &model.cost, &model.control_weight, &StabilizeOptions::default()).unwrap();
    let closed = sparse_to_dense(&a) - model.actuator.dot(&k0);
    assert!(spectral_abscissa(&closed.view()).unwrap() < 0.0);
}

#[test]
fn sdre_on_linear_model_is_lqr() {
    let model = small_model(Benchmark::AllenCahn, 10, 1e-2);
    let mu = [0.5, 11.0, 0.0];
    let x0 = initial_condition(&model.grid);
    let grid = TimeGrid::new(0.0, 0.025, 40).unwrap();
    let run = run_sdre(&model, &mu, &x0, &grid, &SdreOptions::default()).unwrap();
    let gain = lqr_gain(&model.linearization(&mu), &model.actuator, &model.cost, &model.control_weight, &SolverOptions::default()).unwrap();
    let dynamics = FullDynamics {
        model: &model,
        mu: &mu,
        newton: NewtonOptions::default(),
    };
    let lqr = simulate_trajectory(&dynamics, &x0, |_, x| Ok(gain.control(x)), &grid).unwrap();
    for (a, b) in run.trajectory.states.iter().zip(&lqr.states) {
        let scale = b.dot(b).sqrt().max(1e-300);
        assert!((a - b).dot(&(a - b)).sqrt() / scale < 1e-10);
    }
}

#[test]
fn sdre_stabilizes_allen_cahn_in_both_couplings() {
    let model = small_model(Benchmark::AllenCahn, 15, 1e-2);
    let mu = [0.5, 11.0, -11.0];
    let x0 = initial_condition(&model.grid);
    let grid = TimeGrid::with_horizon(0.025, 3.0).unwrap();
    let inf = |x: &Array1<f64>| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dynamics = FullDynamics {
        model: &model,
        mu: &mu,
        newton: NewtonOptions::default(),
    };
    let free = simulate_trajectory(&dynamics, &x0, |_, _| Ok(array![0.0]), &grid).unwrap();
    for coupling in [ControlCoupling::Frozen, ControlCoupling::Coupled] {
        let opts = SdreOptions {
            coupling,
            ..SdreOptions::default()
        };
        let run = run_sdre(&model, &mu, &x0, &grid, &opts).unwrap();
        assert_eq!(run.step_seconds.len(), grid.steps);
        assert!(inf(run.trajectory.final_state()) < 0.1 * inf(free.final_state()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn small_instances_satisfy_contract(k in 2usize..9, m in 1usize..3, seed in 0u64..10_000) {
        let p = random_problem(k, m, seed);
        let gain = solve_are_dense(&p).unwrap();
        let pi = gain.pi.dense();
        prop_assert!(care_residual(&p, &pi) <= residual_tolerance(frobenius(&p.q.view())));
        prop_assert!(spectral_abscissa(&(&p.a - &p.b.dot(&gain.k)).view()).unwrap() < 0.0);
        // K = R⁻¹BᵀΠ
        let rk = p.r.dot(&gain.k);
        prop_assert!(rel(&rk, &p.b.t().dot(&pi)) < 1e-10);
    }
}
