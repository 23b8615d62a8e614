//! Least-squares Monte Carlo solver for (mean-field) BSDEs on a simulated
//! forward ensemble.
//!
//! One backward sweep is
//!
//! ```text
//! Y*_k = E[Y_{k+1} | X_k]
//! Z_k  = E[(Y_{k+1} - Y*_k) ΔB_k | X_k] / Δt
//! Y_k  = E[Y_{k+1} + g(t_k, X_k, Y*_k, Z_k, agg_k) Δt | X_k]
//! ```
//!
//! with conditional expectations by polynomial regression on `X_k`. Drivers
//! that read statistics of the law of `Y` are iterated to a fixed point of the
//! aggregate flow.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{ParticleEnsemble, PathArray};
use crate::problem::{Args, Coefficient, ProblemSpec};
use crate::regression::{RegressionBasis, Regressor};

pub const PICARD_TOLERANCE: f64 = 1e-8;
pub const PICARD_MAX_ITERATIONS: usize = 50;

/// Driver of a BSDE `-dY = g dt - Z dB` on a fixed ensemble.
pub trait BackwardDriver: Sync {
    /// `g` for particle `i` at step `k`.
    fn eval(&self, k: usize, i: usize, y: f64, z: f64, agg: &[f64]) -> f64;

    /// Statistics of the cross-section `(ys, zs)` at step `k` that feed back into the driver.
    fn aggregate(&self, _k: usize, _ys: &[f64], _zs: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    /// Whether [`BackwardDriver::eval`] reads its aggregates.
    fn is_coupled(&self) -> bool {
        false
    }
}

/// A driver given by precomputed per-particle values, `g = values[k][i]`.
pub struct TabulatedDriver<'a>(pub &'a PathArray);

impl BackwardDriver for TabulatedDriver<'_> {
    fn eval(&self, k: usize, i: usize, _y: f64, _z: f64, _agg: &[f64]) -> f64 {
        self.0.get(k, i)
    }
}

/// The problem's own driver `g(t, x, y, z, m, n, u)` with `n` the statistics of the law of `Y`.
pub struct ProblemDriver<'a> {
    pub spec: &'a ProblemSpec,
    pub ensemble: &'a ParticleEnsemble,
}

impl BackwardDriver for ProblemDriver<'_> {
    fn eval(&self, k: usize, i: usize, y: f64, z: f64, agg: &[f64]) -> f64 {
        let e = self.ensemble;
        let a = Args::full(
            e.grid.t(k),
            e.states.get(k, i),
            y,
            z,
            &e.m_stats[k],
            agg,
            e.controls.get(k, i),
        );
        self.spec.eval(Coefficient::Driver, &a)
    }

    fn aggregate(&self, _k: usize, ys: &[f64], _zs: &[f64]) -> Vec<f64> {
        self.spec.basis_n.sample_statistics(ys)
    }

    fn is_coupled(&self) -> bool {
        !self.spec.basis_n.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct BackwardSolution {
    /// `K + 1` rows of `Y`.
    pub y: PathArray,
    /// `K + 1` rows of `Z`; the terminal row is zero.
    pub z: PathArray,
    /// Aggregates (statistics of the law of `Y`) per node.
    pub n_stats: Vec<Vec<f64>>,
    pub picard_iterations: usize,
    pub picard_residual: f64,
    /// Sup-norm aggregate change after each sweep.
    pub picard_history: Vec<f64>,
}

impl BackwardSolution {
    pub fn y0_mean(&self) -> f64 {
        self.y.row_mean(0)
    }
}

/// Solves the problem's BSDE with the terminal condition `Y(T) = X(T)`.
pub fn solve_backward(
    spec: &ProblemSpec,
    ensemble: &ParticleEnsemble,
    basis: &RegressionBasis,
) -> Result<BackwardSolution> {
    let terminal = ensemble.states.row(ensemble.grid.steps()).to_vec();
    let driver = ProblemDriver { spec, ensemble };
    solve_bsde(ensemble, terminal, &driver, basis, "Y")
}

/// Generic regression BSDE solve conditioning on `X`; `process` labels errors.
pub fn solve_bsde<D: BackwardDriver>(
    ensemble: &ParticleEnsemble,
    terminal: Vec<f64>,
    driver: &D,
    basis: &RegressionBasis,
    process: &'static str,
) -> Result<BackwardSolution> {
    solve_bsde_on(
        ensemble,
        &[&ensemble.states],
        terminal,
        driver,
        basis,
        process,
    )
}

/// Regression BSDE solve whose conditional expectations at step `k` regress on
/// row `k` of every covariate (each with `K + 1` rows). The first covariate
/// alone is used where the joint regression is singular.
pub fn solve_bsde_on<D: BackwardDriver>(
    ensemble: &ParticleEnsemble,
    covariates: &[&PathArray],
    terminal: Vec<f64>,
    driver: &D,
    basis: &RegressionBasis,
    process: &'static str,
) -> Result<BackwardSolution> {
    if covariates.is_empty() || covariates.iter().any(|c| c.rows() != ensemble.grid.nodes()) {
        return Err(Error::InvalidInput(
            "regression covariates need one row per node".into(),
        ));
    }
    let grid = &ensemble.grid;
    let steps = grid.steps();
    let n = ensemble.particles();
    if terminal.len() != n {
        return Err(Error::InvalidInput(
            "terminal values do not match the ensemble".into(),
        ));
    }
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState {
            process,
            step: steps,
        });
    }

    let terminal_agg = driver.aggregate(steps, &terminal, &vec![0.0; n]);
    let mut agg = vec![terminal_agg.clone(); steps + 1];
    let mut history = Vec::new();
    let mut y = PathArray::zeros(steps + 1, n);
    let mut z = PathArray::zeros(steps + 1, n);
    y.row_mut(steps).copy_from_slice(&terminal);

    loop {
        sweep(
            ensemble, covariates, driver, basis, &agg, &mut y, &mut z, process,
        )?;
        if !driver.is_coupled() {
            return Ok(BackwardSolution {
                y,
                z,
                n_stats: agg,
                picard_iterations: 1,
                picard_residual: 0.0,
                picard_history: history,
            });
        }
        let fresh: Vec<Vec<f64>> = (0..=steps)
            .map(|k| driver.aggregate(k, y.row(k), z.row(k)))
            .collect();
        let residual = fresh
            .iter()
            .zip(&agg)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max);
        agg = fresh;
        if history.len() >= 2 && residual > history[history.len() - 1] {
            log::warn!(
                "Picard residual increased from {:e} to {residual:e} at sweep {}",
                history[history.len() - 1],
                history.len() + 1
            );
        }
        history.push(residual);
        if residual < PICARD_TOLERANCE {
            let iterations = history.len();
            return Ok(BackwardSolution {
                y,
                z,
                n_stats: agg,
                picard_iterations: iterations,
                picard_residual: residual,
                picard_history: history,
            });
        }
        if history.len() >= PICARD_MAX_ITERATIONS {
            return Err(Error::PicardNonConvergence {
                iterations: history.len(),
                residual,
            });
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep<D: BackwardDriver>(
    ensemble: &ParticleEnsemble,
    covariates: &[&PathArray],
    driver: &D,
    basis: &RegressionBasis,
    agg: &[Vec<f64>],
    y: &mut PathArray,
    z: &mut PathArray,
    process: &'static str,
) -> Result<()> {
    let grid = &ensemble.grid;
    let dt = grid.dt();
    for k in (0..grid.steps()).rev() {
        let rows: Vec<&[f64]> = covariates.iter().map(|c| c.row(k)).collect();
        let reg = match Regressor::fit_multi(&rows, basis, k) {
            Err(Error::SingularRegression { .. }) if rows.len() > 1 => {
                Regressor::fit(rows[0], basis, k)?
            }
            other => other?,
        };
        let next = y.row(k + 1).to_vec();
        let db = ensemble.increments.row(k);
        let ystar = reg.project(&next);
        // centring by Y* leaves the estimator unbiased and removes its variance
        // when Y_{k+1} is already a function of X_k; ΔB_k is independent of the
        // covariates, so E[ΔB_k^2 | X_k] is estimated by the realized variance
        let qv = db.iter().map(|d| d * d).sum::<f64>() / db.len() as f64;
        let scaled: Vec<f64> = (0..next.len())
            .map(|i| (next[i] - ystar[i]) * db[i] / qv)
            .collect();
        let zk = reg.project(&scaled);
        let target: Vec<f64> = (0..next.len())
            .into_par_iter()
            .map(|i| {
                let cv = if basis.control_variate {
                    zk[i] * db[i]
                } else {
                    0.0
                };
                next[i] - cv + driver.eval(k, i, ystar[i], zk[i], &agg[k]) * dt
            })
            .collect();
        let yk = reg.project(&target);
        if yk.iter().chain(&zk).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { process, step: k });
        }
        y.row_mut(k).copy_from_slice(&yk);
        z.row_mut(k).copy_from_slice(&zk);
    }
    Ok(())
}

/// Largest per-step sample mean of `Y_{k+1} - Y_k + g Δt` and the standard
/// error of that step's mean. `g` is evaluated at `(Y_k, Z_k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleResidual {
    pub residual: f64,
    pub stderr: f64,
    pub step: usize,
}

pub fn martingale_residual<D: BackwardDriver>(
    solution: &BackwardSolution,
    ensemble: &ParticleEnsemble,
    driver: &D,
) -> MartingaleResidual {
    let grid = &ensemble.grid;
    let dt = grid.dt();
    let n = ensemble.particles();
    let mut worst = MartingaleResidual {
        residual: 0.0,
        stderr: 0.0,
        step: 0,
    };
    for k in 0..grid.steps() {
        let inc: Vec<f64> = (0..n)
            .map(|i| {
                let yk = solution.y.get(k, i);
                solution.y.get(k + 1, i) - yk
                    + driver.eval(k, i, yk, solution.z.get(k, i), &solution.n_stats[k]) * dt
            })
            .collect();
        let (mean, se) = crate::portfolio::mean_and_stderr(&inc);
        if mean.abs() >= worst.residual.abs() {
            worst = MartingaleResidual {
                residual: mean,
                stderr: se,
                step: k,
            };
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{simulate_forward, TimeGrid};
    use crate::presets;
    use crate::problem::ControlProcess;

    fn ensemble(spec: &ProblemSpec, n: usize, steps: usize) -> ParticleEnsemble {
        let grid = TimeGrid::new(spec.horizon, steps).unwrap();
        simulate_forward(
            spec,
            &ControlProcess::constant(0.0, steps + 1),
            &grid,
            n,
            17,
        )
        .unwrap()
    }

    #[test]
    fn degree_zero_martingale_is_terminal_mean() {
        let spec = presets::gbm(0.05, 0.2, 1.0, 1.0, 0.0, 0.0).unwrap();
        let ens = ensemble(&spec, 2000, 20);
        let sol = solve_backward(&spec, &ens, &RegressionBasis::new(0, 1e-8).unwrap()).unwrap();
        let mean_t = ens.states.row_mean(20);
        assert!((sol.y0_mean() - mean_t).abs() < 1e-12);
        assert_eq!(sol.y.row(20), ens.states.row(20));
    }

    #[test]
    fn linear_driver_discounts() {
        let spec = presets::gbm(0.0, 0.0, 1.0, 1.0, 0.1, 0.0).unwrap();
        let ens = ensemble(&spec, 100, 100);
        let sol = solve_backward(&spec, &ens, &RegressionBasis::default()).unwrap();
        // explicit scheme: (1 - r dt)^K
        assert!((sol.y0_mean() - 0.999f64.powi(100)).abs() < 1e-12);
        assert!((sol.y0_mean() - (-0.1f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn mean_field_driver_converges() {
        let spec = presets::gbm(0.0, 0.2, 2.0, 1.0, 0.0, 0.1).unwrap();
        let ens = ensemble(&spec, 4000, 50);
        let sol = solve_backward(&spec, &ens, &RegressionBasis::default()).unwrap();
        assert!(sol.picard_iterations > 1 && sol.picard_residual < PICARD_TOLERANCE);
        let expected = 2.0 * (-0.1f64).exp();
        assert!((sol.y0_mean() - expected).abs() / expected < 0.01);
        for w in sol.picard_history.windows(2).skip(1) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn martingale_diagnostic_small() {
        let spec = presets::gbm(0.05, 0.2, 1.0, 1.0, 0.0, 0.0).unwrap();
        let ens = ensemble(&spec, 5000, 20);
        let sol = solve_backward(&spec, &ens, &RegressionBasis::default()).unwrap();
        let r = martingale_residual(
            &sol,
            &ens,
            &ProblemDriver {
                spec: &spec,
                ensemble: &ens,
            },
        );
        assert!(r.residual.abs() <= 3.0 * r.stderr + 1e-12, "{r:?}");
    }

    #[test]
    fn picard_failure_is_reported() {
        struct Explosive;
        impl BackwardDriver for Explosive {
            fn eval(&self, _k: usize, _i: usize, _y: f64, _z: f64, agg: &[f64]) -> f64 {
                -50.0 * agg[0]
            }
            fn aggregate(&self, _k: usize, ys: &[f64], _zs: &[f64]) -> Vec<f64> {
                vec![ys.iter().sum::<f64>() / ys.len() as f64]
            }
            fn is_coupled(&self) -> bool {
                true
            }
        }
        let spec = presets::gbm(0.0, 0.2, 1.0, 1.0, 0.0, 0.0).unwrap();
        let ens = ensemble(&spec, 50, 10);
        let terminal = ens.states.row(10).to_vec();
        let err =
            solve_bsde(&ens, terminal, &Explosive, &RegressionBasis::default(), "Y").unwrap_err();
        assert!(matches!(
            err,
            Error::PicardNonConvergence { iterations: 50, .. }
        ));
    }
}
