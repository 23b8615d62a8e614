use mfsmp::forward::brownian_increments;
use mfsmp::measure::{distance_squared, norm_squared};
use mfsmp::portfolio::{girsanov_kernel, optimal_amount, value_of_amount};
use mfsmp::risk::translation_invariance_check;
use mfsmp::{
    presets, simulate_forward, solve_backward, ControlProcess, EmpiricalMeasure, PortfolioParams,
    RegressionBasis, Regressor, RiskDriverSpec, TimeGrid,
};
use proptest::prelude::*;

fn measure(points: &[f64]) -> EmpiricalMeasure {
    EmpiricalMeasure::uniform(points).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_a_symmetric_pseudo_metric(
        a in prop::collection::vec(-5.0f64..5.0, 1..20),
        b in prop::collection::vec(-5.0f64..5.0, 1..20),
    ) {
        let (mu, eta) = (measure(&a), measure(&b));
        let d = distance_squared(&mu, &eta);
        prop_assert!(d >= -1e-12);
        prop_assert!((d - distance_squared(&eta, &mu)).abs() < 1e-12);
        prop_assert!(distance_squared(&mu, &mu).abs() < 1e-12);
    }

    #[test]
    fn probability_norm_is_at_most_sqrt_pi(a in prop::collection::vec(-10.0f64..10.0, 1..30)) {
        let n = norm_squared(&measure(&a));
        prop_assert!(n > 0.0);
        prop_assert!(n <= std::f64::consts::PI.sqrt() + 1e-10);
    }

    #[test]
    fn norm_is_shift_invariant(a in prop::collection::vec(-3.0f64..3.0, 1..15), shift in -4.0f64..4.0) {
        let moved: Vec<f64> = a.iter().map(|x| x + shift).collect();
        prop_assert!((norm_squared(&measure(&a)) - norm_squared(&measure(&moved))).abs() < 1e-10);
    }

    #[test]
    fn regression_reproduces_polynomials(c in prop::array::uniform4(-2.0f64..2.0), seed in 0u64..1000) {
        let xs: Vec<f64> = (0..200).map(|i| ((i as f64 + seed as f64) * 0.618).sin() * 2.0 + 1.0).collect();
        let target: Vec<f64> = xs.iter().map(|x| c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x).collect();
        let reg = Regressor::fit(&xs, &RegressionBasis::new(3, 0.0).unwrap(), 0).unwrap();
        for (p, t) in reg.project(&target).iter().zip(&target) {
            prop_assert!((p - t).abs() < 1e-7 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn optimal_amount_beats_perturbations(b0 in 0.01f64..0.1, s0 in 0.1f64..0.4, r0 in 0.0f64..0.1, bump in -0.5f64..0.5) {
        let grid = TimeGrid::new(1.0, 40).unwrap();
        let params = PortfolioParams::constant(b0, s0, r0, 1.0, 1.0).unwrap();
        let best = optimal_amount(&params, &grid);
        let other: Vec<f64> = best.iter().enumerate().map(|(k, a)| a + bump * (1.0 + k as f64 / 40.0)).collect();
        prop_assert!(value_of_amount(&params, &best, &grid) >= value_of_amount(&params, &other, &grid) - 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn particle_paths_do_not_depend_on_population(seed in 0u64..10_000) {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let spec = presets::gbm(0.05, 0.2, 1.0, 1.0, 0.0, 0.0).unwrap();
        let u = ControlProcess::constant(0.0, grid.nodes());
        let small = simulate_forward(&spec, &u, &grid, 50, seed).unwrap();
        let large = simulate_forward(&spec, &u, &grid, 300, seed).unwrap();
        for k in 0..grid.nodes() {
            prop_assert_eq!(small.states.row(k), &large.states.row(k)[..50]);
        }
    }

    #[test]
    fn terminal_value_is_the_state(seed in 0u64..10_000, r in 0.0f64..0.2) {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let spec = presets::gbm(0.05, 0.2, 1.0, 1.0, r, 0.0).unwrap();
        let ens = simulate_forward(&spec, &ControlProcess::constant(0.0, grid.nodes()), &grid, 400, seed).unwrap();
        let sol = solve_backward(&spec, &ens, &RegressionBasis::default()).unwrap();
        prop_assert_eq!(sol.y.row(10), ens.states.row(10));
    }

    #[test]
    fn girsanov_kernel_is_positive(seed in 0u64..10_000, b0 in -0.2f64..0.2) {
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let params = PortfolioParams::constant(b0, 0.2, 0.05, 1.0, 1.0).unwrap();
        let gamma = girsanov_kernel(&params, &brownian_increments(seed, 200, &grid), &grid);
        prop_assert!(gamma.as_slice().iter().all(|g| *g > 0.0));
    }

    #[test]
    fn risk_translation_holds_for_random_cash(seed in 0u64..10_000, a in -3.0f64..3.0) {
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let spec = presets::gbm(0.05, 0.2, 1.0, 1.0, 0.0, 0.0).unwrap();
        let ens = simulate_forward(&spec, &ControlProcess::constant(0.0, grid.nodes()), &grid, 1000, seed).unwrap();
        let xi = ens.states.row(20).to_vec();
        let res = translation_invariance_check(&RiskDriverSpec::entropic(0.05, 0.05), &xi, a, &ens, &RegressionBasis::default()).unwrap();
        prop_assert!(res < 1e-2 * (1.0 + a.abs()));
    }
}
