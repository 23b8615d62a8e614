//! Invariant checks run by the `property-suite` subcommand.

use anyhow::Result;
use mfsmp::backward::{martingale_residual, ProblemDriver};
use mfsmp::forward::{brownian_increments, measure_flow_lipschitz_report};
use mfsmp::measure::{norm_squared, paired_distance_check};
use mfsmp::optimize::gradient_at;
use mfsmp::portfolio::{entropy, entropy_mc, girsanov_kernel};
use mfsmp::presets;
use mfsmp::risk::{monotonicity_check, translation_invariance_check};
use mfsmp::{
    duality_residuals, gateaux_dj, simulate_forward, solve_adjoints, solve_backward, solve_state,
    ControlProcess, EmpiricalMeasure, InformationMode, PortfolioParams, RegressionBasis,
    RiskDriverSpec, TimeGrid,
};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl PropertyCheck {
    /// `value <= threshold`.
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        PropertyCheck {
            name: name.into(),
            value,
            threshold,
            passed: value <= threshold,
        }
    }

    pub fn status(&self) -> &'static str {
        if self.passed {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Desk-scale invariant checks; sample sizes are capped at `min(N, 4000)`.
pub fn property_suite(cfg: &RunConfig) -> Result<Vec<PropertyCheck>> {
    let n = cfg.particles.min(4000);
    let seed = cfg.seed;
    let grid = TimeGrid::new(1.0, cfg.steps.min(50))?;
    let nodes = grid.nodes();
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut out = Vec::new();

    out.push(PropertyCheck::at_most(
        "norm of a Dirac mass",
        (norm_squared(&EmpiricalMeasure::dirac(0.3)) - sqrt_pi).abs(),
        1e-10,
    ));
    let two = EmpiricalMeasure::uniform(&[0.0, 2.0])?;
    out.push(PropertyCheck::at_most(
        "norm of two atoms",
        (norm_squared(&two) - 0.5 * sqrt_pi * (1.0 + (-1.0f64).exp())).abs(),
        1e-10,
    ));
    let paired = paired_distance_check(200, 100, seed);
    out.push(PropertyCheck::at_most(
        "paired distance bound violations",
        paired.violations as f64,
        0.0,
    ));

    let zero = ControlProcess::constant(0.0, nodes);
    let gbm = presets::gbm(0.1, 0.2, 1.0, 1.0, 0.0, 0.0)?;
    let ens = simulate_forward(&gbm, &zero, &grid, n, seed)?;
    let (m, se) = mean_se(ens.states.row(grid.steps()));
    out.push(PropertyCheck::at_most(
        "GBM mean in standard errors",
        (m - 0.1f64.exp()).abs() / se,
        3.0,
    ));

    let mr = presets::mean_reverting(1.0, 0.2, 1.0, 1.0)?;
    let mr_ens = simulate_forward(&mr, &zero, &grid, n, seed)?;
    let (m, se) = mean_se(mr_ens.states.row(grid.steps()));
    out.push(PropertyCheck::at_most(
        "mean-reverting mean in standard errors",
        (m - 1.0).abs() / se,
        3.0,
    ));
    out.push(PropertyCheck::at_most(
        "measure flow bound violations",
        measure_flow_lipschitz_report(&mr_ens).bound_violations as f64,
        0.0,
    ));

    let degree0 = RegressionBasis::new(0, 0.0)?;
    let sol = solve_backward(&gbm, &ens, &degree0)?;
    out.push(PropertyCheck::at_most(
        "degree-0 Y(0) against sample mean",
        (sol.y0_mean() - m_terminal(&ens)).abs(),
        1e-12,
    ));

    let basis = RegressionBasis::default();
    let linear = presets::gbm(0.1, 0.2, 1.0, 1.0, 0.1, 0.0)?;
    let lin_ens = simulate_forward(&linear, &zero, &grid, n, seed)?;
    let lin = solve_backward(&linear, &lin_ens, &basis)?;
    let mart = martingale_residual(
        &lin,
        &lin_ens,
        &ProblemDriver {
            spec: &linear,
            ensemble: &lin_ens,
        },
    );
    out.push(PropertyCheck::at_most(
        "martingale residual in standard errors",
        mart.residual.abs() / mart.stderr.max(1e-300),
        3.0,
    ));

    let coupled = presets::gbm(0.1, 0.2, 1.0, 1.0, 0.0, 0.1)?;
    let c_ens = simulate_forward(&coupled, &zero, &grid, n, seed)?;
    let c_sol = solve_backward(&coupled, &c_ens, &basis)?;
    let increases = c_sol
        .picard_history
        .windows(2)
        .skip(1)
        .filter(|w| w[1] > w[0])
        .count();
    out.push(PropertyCheck::at_most(
        "Picard residual increases after sweep 1",
        increases as f64,
        0.0,
    ));

    let lq = presets::lq(1.0, 0.2, 1.0, InformationMode::Trivial)?;
    let direction =
        ControlProcess::open_loop((0..nodes).map(|k| (1.0 + grid.t(k)).cos()).collect());
    let state = solve_state(&lq, &zero, &grid, n, seed, &basis)?;
    let (_, grad) = gradient_at(&lq, &zero, &state, &basis)?;
    let adjoint_dj = grad.directional(&state.ensemble, &direction);
    let fd_dj = gateaux_dj(&lq, &zero, &direction, &grid, n, seed, &basis, 1e-4)?;
    out.push(PropertyCheck::at_most(
        "LQ gradient vs Gateaux, relative",
        (adjoint_dj - fd_dj).abs() / (1.0 + fd_dj.abs()),
        0.02,
    ));

    let params = PortfolioParams::constant(0.04, 0.2, 0.05, 1.0, 1.0)?;
    let increments = brownian_increments(seed, n, &grid);
    let gamma = girsanov_kernel(&params, &increments, &grid);
    let (g, g_se) = mean_se(gamma.row(grid.steps()));
    out.push(PropertyCheck::at_most(
        "Girsanov kernel mean in standard errors",
        (g - 1.0).abs() / g_se,
        3.0,
    ));
    let min_gamma = gamma
        .as_slice()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    out.push(PropertyCheck::at_most(
        "Girsanov kernel positivity (-min)",
        -min_gamma,
        0.0,
    ));
    let (e, e_se) = entropy_mc(&params, &increments, &grid);
    out.push(PropertyCheck::at_most(
        "entropy in standard errors",
        (e - entropy(&params, &grid)).abs() / e_se,
        3.0,
    ));

    let portfolio = presets::portfolio(&params)?;
    let u = ControlProcess::constant(1.0, nodes);
    let alt = ControlProcess::constant(1.5, nodes);
    let reference = solve_state(&portfolio, &u, &grid, n, seed, &basis)?;
    let perturbed = solve_state(&portfolio, &alt, &grid, n, seed, &basis)?;
    let adj = solve_adjoints(
        &portfolio,
        &reference.ensemble,
        &reference.backward,
        &u,
        &basis,
        true,
    )?;
    let dual = duality_residuals(&portfolio, &reference, &adj, &u, &perturbed)?;
    for (j, r) in dual.residuals.iter().enumerate() {
        let z = if r.stderr > 0.0 {
            r.value.abs() / r.stderr
        } else {
            r.value.abs() / 1e-12
        };
        out.push(PropertyCheck::at_most(
            &format!("duality identity {} in standard errors", j + 1),
            z,
            3.0,
        ));
    }

    let driver = RiskDriverSpec::entropic(0.05, 0.05);
    let xi = ens.states.row(grid.steps()).to_vec();
    let res = translation_invariance_check(&driver, &xi, 1.0, &ens, &basis)?;
    out.push(PropertyCheck::at_most(
        "risk translation residual, a = 1",
        res,
        2e-2,
    ));
    let upper: Vec<f64> = xi.iter().map(|x| x + 0.1).collect();
    let mono = monotonicity_check(&driver, &xi, &upper, &ens, &basis)?;
    out.push(PropertyCheck::at_most(
        "risk monotonicity violation in standard errors",
        (-mono.difference).max(0.0) / mono.stderr.max(1e-300),
        3.0,
    ));
    Ok(out)
}

fn m_terminal(ens: &mfsmp::ParticleEnsemble) -> f64 {
    ens.states.row_mean(ens.grid.steps())
}
