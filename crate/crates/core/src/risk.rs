//! Dynamic risk measure `phi_t(xi) = -Y(t)` induced by the mean-field BSDE
//!
//! ```text
//! -dY = [-r(t) Y - r'(t) E[Y] + F(t, Z)] dt - Z dB,   Y(T) = xi
//! ```
//!
//! together with its discounting transform and translation-invariance check.

use std::fmt;
use std::sync::Arc;

use crate::adjoint::mean;
use crate::backward::{solve_bsde, BackwardDriver, BackwardSolution};
use crate::error::{Error, Result};
use crate::forward::{ParticleEnsemble, TimeGrid};
use crate::portfolio::{mean_and_stderr, RateFn};
use crate::regression::RegressionBasis;

pub type ZDriverFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct RiskDriverSpec {
    pub r: RateFn,
    pub r_prime: RateFn,
    /// `F(t, z)`, concave in `z`.
    pub f: ZDriverFn,
}

impl fmt::Debug for RiskDriverSpec {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("RiskDriverSpec")
            .field("r(0)", &(self.r)(0.0))
            .field("r_prime(0)", &(self.r_prime)(0.0))
            .finish_non_exhaustive()
    }
}

impl RiskDriverSpec {
    pub fn new(
        r: impl Fn(f64) -> f64 + Send + Sync + 'static,
        r_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        RiskDriverSpec {
            r: Arc::new(r),
            r_prime: Arc::new(r_prime),
            f: Arc::new(f),
        }
    }

    pub fn constant_rates(
        r: f64,
        r_prime: f64,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(move |_| r, move |_| r_prime, f)
    }

    /// Entropic driver `F(z) = -z^2 / 2`.
    pub fn entropic(r: f64, r_prime: f64) -> Self {
        Self::constant_rates(r, r_prime, |_, z| -0.5 * z * z)
    }

    /// `∫_0^{t_k} (r + r') ds` per node, trapezoidal rule.
    pub fn cumulative_rate(&self, grid: &TimeGrid) -> Vec<f64> {
        let rate = |t: f64| (self.r)(t) + (self.r_prime)(t);
        let mut out = vec![0.0; grid.nodes()];
        for k in 1..grid.nodes() {
            out[k] = out[k - 1] + 0.5 * (rate(grid.t(k - 1)) + rate(grid.t(k))) * grid.dt();
        }
        out
    }

    fn validate(&self, grid: &TimeGrid) -> Result<()> {
        for k in 0..grid.nodes() {
            let t = grid.t(k);
            if !(self.r)(t).is_finite() || !(self.r_prime)(t).is_finite() {
                return Err(Error::InvalidInput(format!(
                    "rates are not finite at t = {t}"
                )));
            }
        }
        Ok(())
    }
}

struct RiskDriver<'a> {
    spec: &'a RiskDriverSpec,
    t: Vec<f64>,
    r: Vec<f64>,
    r_prime: Vec<f64>,
}

impl<'a> RiskDriver<'a> {
    fn new(spec: &'a RiskDriverSpec, grid: &TimeGrid) -> Self {
        let t: Vec<f64> = (0..grid.nodes()).map(|k| grid.t(k)).collect();
        RiskDriver {
            spec,
            r: t.iter().map(|&s| (spec.r)(s)).collect(),
            r_prime: t.iter().map(|&s| (spec.r_prime)(s)).collect(),
            t,
        }
    }
}

impl BackwardDriver for RiskDriver<'_> {
    fn eval(&self, k: usize, _i: usize, y: f64, z: f64, agg: &[f64]) -> f64 {
        -self.r[k] * y - self.r_prime[k] * agg[0] + (self.spec.f)(self.t[k], z)
    }

    fn aggregate(&self, _k: usize, ys: &[f64], _zs: &[f64]) -> Vec<f64> {
        vec![mean(ys)]
    }

    fn is_coupled(&self) -> bool {
        self.r_prime.iter().any(|&v| v != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskQuote {
    /// `phi_0 = -Y(0)`.
    pub phi0: f64,
    /// `-E[Y(t_k)]` per node.
    pub phi_path: Vec<f64>,
    pub mean_y: Vec<f64>,
    /// Standard error of the pathwise estimator of `E[Y(t_k)]` per node.
    pub stderr: Vec<f64>,
    /// Standard error of `phi0`.
    pub mc_stderr: f64,
    pub picard_iterations: usize,
}

/// Pathwise samples `xi + Σ_{j ≥ k} (g Δt - Z ΔB)` whose mean reproduces `Y(t_k)`.
fn pathwise_samples(
    ens: &ParticleEnsemble,
    sol: &BackwardSolution,
    driver: &RiskDriver,
    terminal: &[f64],
    control_variate: bool,
) -> Vec<Vec<f64>> {
    let steps = ens.grid.steps();
    let dt = ens.grid.dt();
    let mut out = vec![terminal.to_vec(); steps + 1];
    for k in (0..steps).rev() {
        let agg = &sol.n_stats[k];
        let mut row = out[k + 1].clone();
        for (i, v) in row.iter_mut().enumerate() {
            let (y, z) = (sol.y.get(k, i), sol.z.get(k, i));
            *v += driver.eval(k, i, y, z, agg) * dt;
            if control_variate {
                *v -= z * ens.increments.get(k, i);
            }
        }
        out[k] = row;
    }
    out
}

fn solve(
    driver: &RiskDriverSpec,
    terminal: &[f64],
    ens: &ParticleEnsemble,
    basis: &RegressionBasis,
) -> Result<(BackwardSolution, Vec<Vec<f64>>)> {
    driver.validate(&ens.grid)?;
    let second = terminal.iter().map(|v| v * v).sum::<f64>() / terminal.len().max(1) as f64;
    if !second.is_finite() {
        return Err(Error::InvalidInput(
            "payoff has no finite second moment".into(),
        ));
    }
    let d = RiskDriver::new(driver, &ens.grid);
    let sol = solve_bsde(ens, terminal.to_vec(), &d, basis, "risk Y")?;
    let samples = pathwise_samples(ens, &sol, &d, terminal, basis.control_variate);
    Ok((sol, samples))
}

/// `phi_t(xi) = -Y(t)` for the payoff values `terminal` (one per particle).
pub fn risk(
    driver: &RiskDriverSpec,
    terminal: &[f64],
    ens: &ParticleEnsemble,
    basis: &RegressionBasis,
) -> Result<RiskQuote> {
    let (sol, samples) = solve(driver, terminal, ens, basis)?;
    let mean_y: Vec<f64> = (0..ens.grid.nodes()).map(|k| sol.y.row_mean(k)).collect();
    let stderr: Vec<f64> = samples.iter().map(|s| mean_and_stderr(s).1).collect();
    Ok(RiskQuote {
        phi0: -mean_y[0],
        phi_path: mean_y.iter().map(|y| -y).collect(),
        mc_stderr: stderr[0],
        mean_y,
        stderr,
        picard_iterations: sol.picard_iterations,
    })
}

/// How the discounted driver rescales `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZScaling {
    /// `F^r(t, z) = D(t) F(t, D(t) z)`.
    #[default]
    Forward,
    /// `F^r(t, z) = D(t) F(t, z / D(t))`, the scaling obtained from `Z~ = D Z`.
    Inverse,
}

/// Driver of the discounted process with `D(t) = exp(-∫_0^t (r + r'))`.
#[derive(Debug, Clone)]
pub struct DiscountedDriver {
    /// Zero rates and the transformed `F^r`.
    pub driver: RiskDriverSpec,
    /// `D(t_k)` per node.
    pub discount: Vec<f64>,
}

pub fn discounted_driver(
    driver: &RiskDriverSpec,
    grid: &TimeGrid,
    scaling: ZScaling,
) -> DiscountedDriver {
    let discount: Vec<f64> = driver
        .cumulative_rate(grid)
        .iter()
        .map(|c| (-c).exp())
        .collect();
    let nodes = discount.clone();
    let dt = grid.dt();
    let at = move |t: f64| {
        let k = ((t / dt).round() as usize).min(nodes.len() - 1);
        nodes[k]
    };
    let f = driver.f.clone();
    let transformed = move |t: f64, z: f64| {
        let d = at(t);
        match scaling {
            ZScaling::Forward => d * f(t, d * z),
            ZScaling::Inverse => d * f(t, z / d),
        }
    };
    DiscountedDriver {
        driver: RiskDriverSpec::new(|_| 0.0, |_| 0.0, transformed),
        discount,
    }
}

/// `phi_0` through the discounted formulation: solve with `F^r` and payoff `D(T) xi`.
pub fn discounted_risk(
    driver: &RiskDriverSpec,
    terminal: &[f64],
    ens: &ParticleEnsemble,
    basis: &RegressionBasis,
    scaling: ZScaling,
) -> Result<RiskQuote> {
    let disc = discounted_driver(driver, &ens.grid, scaling);
    let d_t = disc.discount[ens.grid.steps()];
    let scaled: Vec<f64> = terminal.iter().map(|v| d_t * v).collect();
    risk(&disc.driver, &scaled, ens, basis)
}

/// `|phi_0(xi + a e^{∫_0^T (r + r')}) - (phi_0(xi) - a)|` on common paths.
pub fn translation_invariance_check(
    driver: &RiskDriverSpec,
    terminal: &[f64],
    a: f64,
    ens: &ParticleEnsemble,
    basis: &RegressionBasis,
) -> Result<f64> {
    let growth = driver.cumulative_rate(&ens.grid)[ens.grid.steps()].exp();
    let base = risk(driver, terminal, ens, basis)?;
    let shifted: Vec<f64> = terminal.iter().map(|v| v + a * growth).collect();
    let moved = risk(driver, &shifted, ens, basis)?;
    Ok((moved.phi0 - (base.phi0 - a)).abs())
}

/// `phi_0(xi1) - phi_0(xi2)` with the standard error of the paired pathwise difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityCheck {
    pub difference: f64,
    pub stderr: f64,
}

impl MonotonicityCheck {
    /// For `xi1 <= xi2` the difference must not be significantly negative.
    pub fn holds(&self, sigmas: f64) -> bool {
        self.difference >= -sigmas * self.stderr - 1e-12
    }
}

pub fn monotonicity_check(
    driver: &RiskDriverSpec,
    lower: &[f64],
    upper: &[f64],
    ens: &ParticleEnsemble,
    basis: &RegressionBasis,
) -> Result<MonotonicityCheck> {
    let (lo, lo_samples) = solve(driver, lower, ens, basis)?;
    let (hi, hi_samples) = solve(driver, upper, ens, basis)?;
    let diff: Vec<f64> = lo_samples[0]
        .iter()
        .zip(&hi_samples[0])
        .map(|(l, h)| h - l)
        .collect();
    Ok(MonotonicityCheck {
        difference: hi.y.row_mean(0) - lo.y.row_mean(0),
        stderr: mean_and_stderr(&diff).1,
    })
}
