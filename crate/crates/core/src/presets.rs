//! Named problems shipped with the crate.

use crate::error::Result;
use crate::measure::StatisticBasis;
use crate::portfolio::PortfolioParams;
use crate::problem::{Coefficient::*, ControlSet, InformationMode, ProblemSpec, Sense, Wrt};

/// Geometric Brownian motion `dX = b0 X dt + s X dB`, with the backward driver
/// `g = -r y - r_prime * mean(N)` and cost `J = Y(0)`.
pub fn gbm(b0: f64, s: f64, x0: f64, horizon: f64, r: f64, r_prime: f64) -> Result<ProblemSpec> {
    let mut builder = ProblemSpec::builder("gbm", x0, horizon)
        .coefficient(Drift, move |a| b0 * a.x)
        .partial(Drift, Wrt::X, move |_| b0)
        .independent_of(Drift, &[Wrt::U, Wrt::M(0), Wrt::M(1), Wrt::M(2)])
        .coefficient(Diffusion, move |a| s * a.x)
        .partial(Diffusion, Wrt::X, move |_| s)
        .independent_of(Diffusion, &[Wrt::U, Wrt::M(0), Wrt::M(1), Wrt::M(2)])
        .coefficient(InitialCost, |a| a.y)
        .partial(InitialCost, Wrt::Y, |_| 1.0)
        .basis_m(StatisticBasis::monomials(3));
    if r_prime != 0.0 {
        builder = builder
            .coefficient(Driver, move |a| -r * a.y - r_prime * a.n[0])
            .partial(Driver, Wrt::N(0), move |_| -r_prime)
            .basis_n(StatisticBasis::monomials(1));
    } else {
        builder = builder.coefficient(Driver, move |a| -r * a.y);
    }
    builder
        .partial(Driver, Wrt::Y, move |_| -r)
        .independent_of(Driver, &[Wrt::X, Wrt::Z, Wrt::U])
        .build()
}

/// Mean-field mean reversion `dX = kappa (E[X] - X) dt + sigma dB`, `J = Y(0)`.
pub fn mean_reverting(kappa: f64, sigma: f64, x0: f64, horizon: f64) -> Result<ProblemSpec> {
    ProblemSpec::builder("mean_reverting", x0, horizon)
        .coefficient(Drift, move |a| kappa * (a.m[0] - a.x))
        .partial(Drift, Wrt::X, move |_| -kappa)
        .partial(Drift, Wrt::M(0), move |_| kappa)
        .independent_of(Drift, &[Wrt::U, Wrt::M(1), Wrt::M(2)])
        .coefficient(Diffusion, move |_| sigma)
        .independent_of(
            Diffusion,
            &[Wrt::X, Wrt::U, Wrt::M(0), Wrt::M(1), Wrt::M(2)],
        )
        .coefficient(InitialCost, |a| a.y)
        .partial(InitialCost, Wrt::Y, |_| 1.0)
        .basis_m(StatisticBasis::monomials(3))
        .build()
}

/// Linear-quadratic toy: `dX = u dt + sigma dB`, `J = E[X(T)^2 + ∫ u^2 dt]`.
///
/// Open-loop optimum `u* = -x0 / (1 + T)` with `J* = x0^2 / (1 + T) + sigma^2 T`.
pub fn lq(x0: f64, sigma: f64, horizon: f64, info: InformationMode) -> Result<ProblemSpec> {
    ProblemSpec::builder("lq", x0, horizon)
        .coefficient(Drift, |a| a.u)
        .partial(Drift, Wrt::U, |_| 1.0)
        .independent_of(Drift, &[Wrt::X, Wrt::M(0)])
        .coefficient(Diffusion, move |_| sigma)
        .independent_of(Diffusion, &[Wrt::X, Wrt::U, Wrt::M(0)])
        .coefficient(RunningCost, |a| a.u * a.u)
        .partial(RunningCost, Wrt::U, |a| 2.0 * a.u)
        .independent_of(RunningCost, &[Wrt::X, Wrt::Y, Wrt::Z, Wrt::M(0)])
        .coefficient(TerminalCost, |a| a.x * a.x)
        .partial(TerminalCost, Wrt::X, |a| 2.0 * a.x)
        .independent_of(TerminalCost, &[Wrt::M(0)])
        .independent_of(Driver, &[Wrt::X, Wrt::Y, Wrt::Z, Wrt::U, Wrt::M(0)])
        .independent_of(InitialCost, &[Wrt::Y])
        .basis_m(StatisticBasis::monomials(1))
        .info(info)
        .build()
}

/// Portfolio risk minimization with the invested amount `a = pi X` as control:
/// `dX = a (b0 dt + sigma0 dB)`, driver `g = -r0 E[Y] - z^2 / 2`, maximize `Y(0)`.
pub fn portfolio(params: &PortfolioParams) -> Result<ProblemSpec> {
    let (b0, s0) = (params.b0.clone(), params.sigma0.clone());
    let (b0u, s0u) = (params.b0.clone(), params.sigma0.clone());
    portfolio_backward(
        params,
        ProblemSpec::builder("portfolio", params.x0, params.horizon),
    )
    .coefficient(Drift, move |a| a.u * b0(a.t))
    .partial(Drift, Wrt::U, move |a| b0u(a.t))
    .independent_of(Drift, &[Wrt::X])
    .coefficient(Diffusion, move |a| a.u * s0(a.t))
    .partial(Diffusion, Wrt::U, move |a| s0u(a.t))
    .independent_of(Diffusion, &[Wrt::X])
    .build()
}

/// Same market with the invested fraction `pi` as control: `dX = pi X (b0 dt + sigma0 dB)`.
pub fn portfolio_proportion(params: &PortfolioParams) -> Result<ProblemSpec> {
    let (b0, s0) = (params.b0.clone(), params.sigma0.clone());
    let (b0x, s0x) = (params.b0.clone(), params.sigma0.clone());
    let (b0u, s0u) = (params.b0.clone(), params.sigma0.clone());
    portfolio_backward(
        params,
        ProblemSpec::builder("portfolio_proportion", params.x0, params.horizon),
    )
    .coefficient(Drift, move |a| a.u * a.x * b0(a.t))
    .partial(Drift, Wrt::X, move |a| a.u * b0x(a.t))
    .partial(Drift, Wrt::U, move |a| a.x * b0u(a.t))
    .coefficient(Diffusion, move |a| a.u * a.x * s0(a.t))
    .partial(Diffusion, Wrt::X, move |a| a.u * s0x(a.t))
    .partial(Diffusion, Wrt::U, move |a| a.x * s0u(a.t))
    .build()
}

fn portfolio_backward(
    params: &PortfolioParams,
    builder: crate::problem::ProblemBuilder,
) -> crate::problem::ProblemBuilder {
    let r0 = params.r0.clone();
    let r0n = params.r0.clone();
    builder
        .coefficient(Driver, move |a| -r0(a.t) * a.n[0] - 0.5 * a.z * a.z)
        .partial(Driver, Wrt::Z, |a| -a.z)
        .partial(Driver, Wrt::N(0), move |a| -r0n(a.t))
        .independent_of(Driver, &[Wrt::X, Wrt::Y, Wrt::U])
        .coefficient(InitialCost, |a| a.y)
        .partial(InitialCost, Wrt::Y, |_| 1.0)
        .independent_of(InitialCost, &[Wrt::N(0)])
        .basis_n(StatisticBasis::monomials(1))
        .control_set(ControlSet::real_line())
        .info(InformationMode::Trivial)
        .sense(Sense::Maximize)
}

/// Names of the shipped presets.
pub const NAMES: [&str; 5] = [
    "gbm",
    "mean_reverting",
    "lq",
    "portfolio",
    "portfolio_proportion",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Args, Coefficient};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_presets() -> Vec<ProblemSpec> {
        let params = PortfolioParams::constant(0.04, 0.2, 0.05, 1.0, 1.0).unwrap();
        vec![
            gbm(0.05, 0.2, 1.0, 1.0, 0.1, 0.1).unwrap(),
            mean_reverting(2.0, 0.2, 1.0, 1.0).unwrap(),
            lq(1.0, 0.2, 1.0, InformationMode::Trivial).unwrap(),
            portfolio(&params).unwrap(),
            portfolio_proportion(&params).unwrap(),
        ]
    }

    #[test]
    fn preset_values() {
        let gbm = gbm(0.05, 0.2, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert!(
            (gbm.eval(Coefficient::Drift, &Args::forward(0.0, 2.0, &[0.0; 3], 0.0)) - 0.1).abs()
                < 1e-15
        );
        let mr = mean_reverting(1.0, 0.2, 1.0, 1.0).unwrap();
        assert_eq!(
            mr.eval(
                Coefficient::Drift,
                &Args::forward(0.0, 1.0, &[1.0, 0.0, 0.0], 0.0)
            ),
            0.0
        );
        let mr2 = mean_reverting(2.0, 0.2, 1.0, 1.0).unwrap();
        let d = mr2.partial(
            Coefficient::Drift,
            Wrt::M(0),
            &Args::forward(0.0, 0.3, &[1.0, 0.0, 0.0], 0.0),
        );
        assert_eq!(d, 2.0);
        let params = PortfolioParams::constant(0.04, 0.2, 0.05, 1.0, 1.0).unwrap();
        let p = portfolio_proportion(&params).unwrap();
        let sigma = p.eval(Coefficient::Diffusion, &Args::forward(0.0, 10.0, &[], 0.5));
        assert!((sigma - 1.0).abs() < 1e-15);
        let p = portfolio(&params).unwrap();
        let dz = p.partial(
            Coefficient::Driver,
            Wrt::Z,
            &Args::full(0.0, 1.0, 0.0, 0.2, &[], &[0.0], 0.0),
        );
        assert!((dz + 0.2).abs() < 1e-15);
    }

    #[test]
    fn analytic_partials_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for spec in all_presets() {
            for (which, wrt) in spec.registered_partials() {
                for _ in 0..100 {
                    let m: Vec<f64> = (0..spec.basis_m.len())
                        .map(|_| rng.random_range(-2.0..2.0))
                        .collect();
                    let n: Vec<f64> = (0..spec.basis_n.len())
                        .map(|_| rng.random_range(-2.0..2.0))
                        .collect();
                    let a = Args::full(
                        rng.random_range(0.0..1.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                        &m,
                        &n,
                        rng.random_range(-2.0..2.0),
                    );
                    let exact = spec.partial(which, wrt, &a);
                    let fd = spec.finite_difference(which, wrt, &a);
                    assert!(
                        (exact - fd).abs() <= 1e-5 * exact.abs().max(1.0),
                        "{} d{}/d{wrt:?}: {exact} vs {fd}",
                        spec.name,
                        which.name()
                    );
                }
            }
        }
    }

    #[test]
    fn linear_partials_are_constant() {
        let spec = gbm(0.05, 0.2, 1.0, 1.0, 0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = Args::forward(0.0, rng.random_range(-100.0..100.0), &[0.0; 3], 0.0);
            assert_eq!(spec.partial(Coefficient::Drift, Wrt::X, &a), 0.05);
        }
    }
}
