//! Mean-field portfolio risk minimization: market parameters, closed-form
//! quantities and the end-to-end benchmark.
//!
//! The wealth follows `dX = a(t) (b0 dt + sigma0 dB)` where `a` is the invested
//! amount, the risk is `-Y(0)` for `-dY = (-r0 E[Y] - Z^2 / 2) dt - Z dB`,
//! `Y(T) = X(T)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::{brownian_increments, PathArray, TimeGrid};
use crate::optimize::{gradient_at, optimize, solve_state, Estimate, OptimizerSettings};
use crate::presets;
use crate::problem::ControlProcess;
use crate::regression::RegressionBasis;

pub type RateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct PortfolioParams {
    pub b0: RateFn,
    pub sigma0: RateFn,
    pub r0: RateFn,
    pub x0: f64,
    pub horizon: f64,
}

impl fmt::Debug for PortfolioParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PortfolioParams")
            .field("b0(0)", &(self.b0)(0.0))
            .field("sigma0(0)", &(self.sigma0)(0.0))
            .field("r0(0)", &(self.r0)(0.0))
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl PortfolioParams {
    pub fn new(b0: RateFn, sigma0: RateFn, r0: RateFn, x0: f64, horizon: f64) -> Result<Self> {
        let params = Self {
            b0,
            sigma0,
            r0,
            x0,
            horizon,
        };
        params.validate(&TimeGrid::new(horizon, 1000)?)?;
        Ok(params)
    }

    pub fn constant(b0: f64, sigma0: f64, r0: f64, x0: f64, horizon: f64) -> Result<Self> {
        Self::new(
            Arc::new(move |_| b0),
            Arc::new(move |_| sigma0),
            Arc::new(move |_| r0),
            x0,
            horizon,
        )
    }

    /// Checks `x0 > 0` and `|sigma0| > 1e-8` on every node of `grid`.
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if !(self.x0.is_finite() && self.x0 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "x0 must be positive, got {}",
                self.x0
            )));
        }
        for k in 0..grid.nodes() {
            let t = grid.t(k);
            let s = (self.sigma0)(t);
            if s.is_nan() || s.abs() <= 1e-8 {
                return Err(Error::InvalidInput(format!(
                    "sigma0({t}) = {s} is not bounded away from zero"
                )));
            }
            if !(self.b0)(t).is_finite() || !(self.r0)(t).is_finite() {
                return Err(Error::InvalidInput(format!(
                    "b0 or r0 not finite at t = {t}"
                )));
            }
        }
        Ok(())
    }

    /// Market price of risk `b0 / sigma0`.
    pub fn theta(&self, t: f64) -> f64 {
        (self.b0)(t) / (self.sigma0)(t)
    }
}

fn trapezoid(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let dt = grid.dt();
    let mut acc = vec![0.0; grid.nodes()];
    let mut prev = f(grid.t(0));
    for k in 1..grid.nodes() {
        let cur = f(grid.t(k));
        acc[k] = acc[k - 1] + 0.5 * dt * (prev + cur);
        prev = cur;
    }
    acc
}

/// `b0(t_k) / sigma0(t_k)` at every node.
pub fn closed_form_z(params: &PortfolioParams, grid: &TimeGrid) -> Vec<f64> {
    (0..grid.nodes()).map(|k| params.theta(grid.t(k))).collect()
}

/// Pathwise `Gamma(t_k) = exp(-Σ theta ΔB - ½ Σ theta^2 Δt)` from stored increments,
/// `K + 1` rows.
pub fn girsanov_kernel(
    params: &PortfolioParams,
    increments: &PathArray,
    grid: &TimeGrid,
) -> PathArray {
    let n = increments.particles();
    let dt = grid.dt();
    let mut log_gamma = vec![0.0; n];
    let mut out = PathArray::zeros(grid.nodes(), n);
    out.row_mut(0).fill(1.0);
    for k in 0..grid.steps() {
        let th = params.theta(grid.t(k));
        let db = increments.row(k);
        for (lg, d) in log_gamma.iter_mut().zip(db) {
            *lg += -th * d - 0.5 * th * th * dt;
        }
        for (o, lg) in out.row_mut(k + 1).iter_mut().zip(&log_gamma) {
            *o = lg.exp();
        }
    }
    out
}

/// Relative entropy `½ ∫ theta^2 dt` of the martingale measure, trapezoidal.
pub fn entropy(params: &PortfolioParams, grid: &TimeGrid) -> f64 {
    let th = trapezoid(grid, |t| params.theta(t).powi(2));
    0.5 * th[grid.steps()]
}

/// Monte Carlo `E[Gamma(T) ln Gamma(T)]` and its standard error.
pub fn entropy_mc(params: &PortfolioParams, increments: &PathArray, grid: &TimeGrid) -> (f64, f64) {
    let gamma = girsanov_kernel(params, increments, grid);
    let samples: Vec<f64> = gamma.row(grid.steps()).iter().map(|g| g * g.ln()).collect();
    mean_and_stderr(&samples)
}

pub(crate) fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean of the optimal `Y` when `Z = theta`: the solution of
/// `dE[Y] = (r0 E[Y] + ½ theta^2) dt` from `Y0`, by quadrature.
pub fn closed_form_mean_y(params: &PortfolioParams, y0: f64, grid: &TimeGrid) -> Vec<f64> {
    let rint = trapezoid(grid, |t| (params.r0)(t));
    let dt = grid.dt();
    let mut acc = 0.0;
    let mut prev = 0.5 * params.theta(0.0).powi(2);
    let mut out = vec![y0; grid.nodes()];
    for k in 1..grid.nodes() {
        let cur = 0.5 * params.theta(grid.t(k)).powi(2) * (-rint[k]).exp();
        acc += 0.5 * dt * (prev + cur);
        prev = cur;
        out[k] = rint[k].exp() * (y0 + acc);
    }
    out
}

/// Risk-minimizing amount `a*(t) = exp(-∫_t^T r0) b0 / sigma0^2`.
pub fn optimal_amount(params: &PortfolioParams, grid: &TimeGrid) -> Vec<f64> {
    let rint = trapezoid(grid, |t| (params.r0)(t));
    let total = rint[grid.steps()];
    (0..grid.nodes())
        .map(|k| {
            let t = grid.t(k);
            (rint[k] - total).exp() * (params.b0)(t) / (params.sigma0)(t).powi(2)
        })
        .collect()
}

/// `Z` along the optimal amount, `exp(-∫_t^T r0) b0 / sigma0`.
pub fn optimal_z(params: &PortfolioParams, grid: &TimeGrid) -> Vec<f64> {
    optimal_amount(params, grid)
        .iter()
        .enumerate()
        .map(|(k, a)| a * (params.sigma0)(grid.t(k)))
        .collect()
}

/// `Y(0)` under a deterministic amount schedule given at the grid nodes:
/// `D(T) (x0 + ∫ a b0) - ½ ∫ D(s) a^2 sigma0^2 ds` with `D(t) = exp(-∫_0^t r0)`.
/// The integrals use the left-point rule matching the Euler scheme.
pub fn value_of_amount(params: &PortfolioParams, amount: &[f64], grid: &TimeGrid) -> f64 {
    let rint = trapezoid(grid, |t| (params.r0)(t));
    let dt = grid.dt();
    let d_t = (-rint[grid.steps()]).exp();
    let mut gain = 0.0;
    let mut penalty = 0.0;
    for k in 0..grid.steps() {
        let t = grid.t(k);
        gain += amount[k] * (params.b0)(t) * dt;
        penalty += 0.5 * (-rint[k]).exp() * (amount[k] * (params.sigma0)(t)).powi(2) * dt;
    }
    d_t * (params.x0 + gain) - penalty
}

/// Minimal risk `-Y(0)` at the optimal amount,
/// `-[D(T) x0 + ½ ∫ D(T)^2 theta^2 / D(s) ds]`.
pub fn minimal_risk(params: &PortfolioParams, grid: &TimeGrid) -> f64 {
    let rint = trapezoid(grid, |t| (params.r0)(t));
    let total = rint[grid.steps()];
    let dt = grid.dt();
    let integrand: Vec<f64> = (0..grid.nodes())
        .map(|k| (rint[k] - 2.0 * total).exp() * params.theta(grid.t(k)).powi(2))
        .collect();
    let integral: f64 = integrand.windows(2).map(|w| 0.5 * dt * (w[0] + w[1])).sum();
    -((-total).exp() * params.x0 + 0.5 * integral)
}

/// Best constant amount over `candidates`, scored by [`value_of_amount`].
/// Returns `(amount, minimal risk)`.
pub fn grid_search_constant_amount(
    params: &PortfolioParams,
    grid: &TimeGrid,
    candidates: &[f64],
) -> (f64, f64) {
    let mut best = (f64::NAN, f64::INFINITY);
    for &a in candidates {
        let risk = -value_of_amount(params, &vec![a; grid.nodes()], grid);
        if risk < best.1 {
            best = (a, risk);
        }
    }
    best
}

/// A competing closed-form expression for the minimal risk, with its upper
/// integration limits read as `T`:
/// `(-x0 - e^{-R} ½ ∫ theta^2 e^{R(s)} ds) / (1 - e^{-R}) - ½ ∫ theta^2`.
/// Kept for comparison only; it disagrees with [`minimal_risk`] and is not an oracle.
pub fn alternative_minimal_risk(params: &PortfolioParams, grid: &TimeGrid) -> f64 {
    let rint = trapezoid(grid, |t| (params.r0)(t));
    let total = rint[grid.steps()];
    let weighted = trapezoid(grid, |t| {
        params.theta(t).powi(2) * integral_r0(params, t).exp()
    });
    let inner = -params.x0 - (-total).exp() * 0.5 * weighted[grid.steps()];
    inner / (1.0 - (-total).exp()) - entropy(params, grid)
}

fn integral_r0(params: &PortfolioParams, t: f64) -> f64 {
    let n = 200;
    let h = t / n as f64;
    (0..n)
        .map(|i| 0.5 * h * ((params.r0)(i as f64 * h) + (params.r0)((i + 1) as f64 * h)))
        .sum()
}

/// Inputs of [`benchmark`] besides the market.
#[derive(Debug, Clone)]
pub struct BenchmarkSettings {
    pub particles: usize,
    pub seed: u64,
    pub basis: RegressionBasis,
    pub optimizer: OptimizerSettings,
    /// Constant starting amount.
    pub initial_amount: f64,
    /// Paths for the Monte Carlo entropy estimate.
    pub entropy_particles: usize,
}

impl BenchmarkSettings {
    /// Control-variate regression and a Newton-scaled first step `1 / mean(sigma0^2)`.
    pub fn new(params: &PortfolioParams, grid: &TimeGrid, particles: usize, seed: u64) -> Self {
        let var = (0..grid.nodes())
            .map(|k| (params.sigma0)(grid.t(k)).powi(2))
            .sum::<f64>()
            / grid.nodes() as f64;
        BenchmarkSettings {
            particles,
            seed,
            basis: RegressionBasis::default().with_control_variate(true),
            optimizer: OptimizerSettings {
                step0: 1.0 / var,
                ..OptimizerSettings::default()
            },
            initial_amount: 0.0,
            entropy_particles: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    /// Times `t_0 .. t_{K-1}` of the per-step columns.
    pub t: Vec<f64>,
    /// Cross-sectional mean of the recovered `Z` per step.
    pub z_recovered: Vec<f64>,
    /// `b0 / sigma0`.
    pub z_closed_form: Vec<f64>,
    /// `exp(-∫_t^T r0) b0 / sigma0`.
    pub z_optimal: Vec<f64>,
    /// `E[p0 b0 + q0 sigma0]` per step, the stationarity condition in amount form.
    pub grad_residual: Vec<f64>,
    pub p0_mean: Vec<f64>,
    pub lambda0_mean: Vec<f64>,
    pub amount: Vec<f64>,
    /// Max relative error of `Z` against `b0 / sigma0` over interior steps.
    pub z_error_closed_form: f64,
    /// Max relative error of `Z` against the discounted optimum over interior steps.
    pub z_error_optimal: f64,
    pub stationarity_residual: f64,
    /// `sqrt(Σ (p0 - lambda0)^2 / Σ lambda0^2)` over all particles and steps.
    pub p0_lambda0_discrepancy: f64,
    pub minimal_risk: Estimate,
    pub minimal_risk_oracle: f64,
    pub minimal_risk_alternative: f64,
    pub entropy_analytic: f64,
    pub entropy_mc: Estimate,
    pub iterations: usize,
    pub converged: bool,
    pub stalled: bool,
}

fn max_relative_error(got: &[f64], want: &[f64]) -> f64 {
    let n = got.len();
    (1..n.saturating_sub(1))
        .map(|k| (got[k] - want[k]).abs() / want[k].abs().max(1e-12))
        .fold(0.0, f64::max)
}

/// Optimizes the invested amount on the portfolio problem and compares the
/// outcome with the closed forms.
pub fn benchmark(
    params: &PortfolioParams,
    grid: &TimeGrid,
    settings: &BenchmarkSettings,
) -> Result<BenchmarkReport> {
    params.validate(grid)?;
    let spec = presets::portfolio(params)?;
    let basis = &settings.basis;
    let u0 = ControlProcess::constant(settings.initial_amount, grid.nodes());
    let run = optimize(
        &spec,
        &u0,
        grid,
        settings.particles,
        settings.seed,
        basis,
        &settings.optimizer,
    )?;
    let state = solve_state(
        &spec,
        &run.control,
        grid,
        settings.particles,
        settings.seed,
        basis,
    )?;
    let (adj, _) = gradient_at(&spec, &run.control, &state, basis)?;
    let steps = grid.steps();
    let n = state.ensemble.particles();

    let t: Vec<f64> = (0..steps).map(|k| grid.t(k)).collect();
    let z_recovered: Vec<f64> = (0..steps).map(|k| state.backward.z.row_mean(k)).collect();
    let z_closed_form = closed_form_z(params, grid)[..steps].to_vec();
    let z_optimal = optimal_z(params, grid)[..steps].to_vec();
    let grad_residual: Vec<f64> = (0..steps)
        .map(|k| {
            let (b, s) = ((params.b0)(t[k]), (params.sigma0)(t[k]));
            (0..n)
                .map(|i| adj.p0.get(k, i) * b + adj.q0.get(k, i) * s)
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let p0_mean: Vec<f64> = (0..steps).map(|k| adj.p0.row_mean(k)).collect();
    let lambda0_mean: Vec<f64> = (0..steps).map(|k| adj.lambda0.row_mean(k)).collect();
    let amount: Vec<f64> = (0..steps)
        .map(|k| run.control.value(k, t[k], params.x0, &spec.control_set))
        .collect();

    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..steps {
        for (p, l) in adj.p0.row(k).iter().zip(adj.lambda0.row(k)) {
            num += (p - l).powi(2);
            den += l * l;
        }
    }

    let increments = brownian_increments(
        settings.seed ^ 0x9e37_79b9_7f4a_7c15,
        settings.entropy_particles,
        grid,
    );
    let (entropy_value, entropy_se) = entropy_mc(params, &increments, grid);

    Ok(BenchmarkReport {
        z_error_closed_form: max_relative_error(&z_recovered, &z_closed_form),
        z_error_optimal: max_relative_error(&z_recovered, &z_optimal),
        stationarity_residual: grad_residual.iter().fold(0.0, |m, g| m.max(g.abs())),
        p0_lambda0_discrepancy: (num / den).sqrt(),
        minimal_risk: run.objective,
        minimal_risk_oracle: minimal_risk(params, grid),
        minimal_risk_alternative: alternative_minimal_risk(params, grid),
        entropy_analytic: entropy(params, grid),
        entropy_mc: Estimate {
            value: entropy_value,
            stderr: entropy_se,
        },
        iterations: run.iterations,
        converged: run.converged,
        stalled: run.stalled,
        t,
        z_recovered,
        z_closed_form,
        z_optimal,
        grad_residual,
        p0_mean,
        lambda0_mean,
        amount,
    })
}
