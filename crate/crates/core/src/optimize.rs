//! Objective evaluation, Gateaux derivatives and projected-gradient descent.

use rayon::prelude::*;

use crate::adjoint::{control_gradient, mean, solve_adjoints, AdjointBundle, ControlGradient};
use crate::backward::{solve_backward, solve_bsde, BackwardSolution, TabulatedDriver};
use crate::error::{Error, Result};
use crate::forward::{simulate_forward, ParticleEnsemble, PathArray, TimeGrid};
use crate::portfolio::mean_and_stderr;
use crate::problem::{Args, Coefficient, ControlProcess, InformationMode, ProblemSpec};
use crate::regression::RegressionBasis;

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Forward and backward solutions for one control on one set of paths.
#[derive(Debug, Clone)]
pub struct StateSolution {
    pub ensemble: ParticleEnsemble,
    pub backward: BackwardSolution,
}

pub fn solve_state(
    spec: &ProblemSpec,
    control: &ControlProcess,
    grid: &TimeGrid,
    particles: usize,
    seed: u64,
    basis: &RegressionBasis,
) -> Result<StateSolution> {
    let ensemble = simulate_forward(spec, control, grid, particles, seed)?;
    let backward = solve_backward(spec, &ensemble, basis)?;
    Ok(StateSolution { ensemble, backward })
}

/// Per-particle cost `h(X(T), M(T)) + phi(Y(0), N(0)) + Σ f Δt` (left endpoints), unsigned.
pub fn cost_samples(spec: &ProblemSpec, state: &StateSolution) -> Vec<f64> {
    let ens = &state.ensemble;
    let bwd = &state.backward;
    let steps = ens.grid.steps();
    let dt = ens.grid.dt();
    (0..ens.particles())
        .into_par_iter()
        .map(|i| {
            let terminal = Args::full(
                ens.grid.t(steps),
                ens.states.get(steps, i),
                bwd.y.get(steps, i),
                0.0,
                &ens.m_stats[steps],
                &bwd.n_stats[steps],
                ens.controls.get(steps, i),
            );
            let mut c = spec.eval(Coefficient::TerminalCost, &terminal)
                + spec.eval(
                    Coefficient::InitialCost,
                    &Args::initial(bwd.y.get(0, i), &bwd.n_stats[0]),
                );
            for k in 0..steps {
                c += spec.eval(
                    Coefficient::RunningCost,
                    &crate::adjoint::args_at(ens, bwd, k, i),
                ) * dt;
            }
            c
        })
        .collect()
}

/// The minimized objective `sense.sign() * J`.
///
/// With the control variate enabled, `E[h + Σ f Δt]` is read off the cost-to-go
/// BSDE solved by the same regression, so the objective and its adjoint
/// gradient share one estimator. The standard error is then that of the
/// pathwise samples `h + φ + Σ (f Δt - Z ΔB)`, otherwise of the plain cost.
pub fn objective(
    spec: &ProblemSpec,
    state: &StateSolution,
    basis: &RegressionBasis,
) -> Result<Estimate> {
    let samples = cost_samples(spec, state);
    let (plain, mut se) = mean_and_stderr(&samples);
    let m = if basis.control_variate {
        let ens = &state.ensemble;
        let bwd = &state.backward;
        let steps = ens.grid.steps();
        let n = ens.particles();
        let mut running = PathArray::zeros(steps + 1, n);
        for k in 0..steps {
            let row: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| {
                    spec.eval(
                        Coefficient::RunningCost,
                        &crate::adjoint::args_at(ens, bwd, k, i),
                    )
                })
                .collect();
            running.row_mut(k).copy_from_slice(&row);
        }
        let terminal: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                spec.eval(
                    Coefficient::TerminalCost,
                    &crate::adjoint::args_at(ens, bwd, steps, i),
                )
            })
            .collect();
        let to_go = solve_bsde(
            ens,
            terminal.clone(),
            &TabulatedDriver(&running),
            basis,
            "cost",
        )?;
        let initial: Vec<f64> = (0..n)
            .map(|i| {
                spec.eval(
                    Coefficient::InitialCost,
                    &Args::initial(bwd.y.get(0, i), &bwd.n_stats[0]),
                )
            })
            .collect();
        let pathwise: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut v = terminal[i] + initial[i];
                for k in 0..steps {
                    v += running.get(k, i) * ens.grid.dt()
                        - to_go.z.get(k, i) * ens.increments.get(k, i);
                }
                v
            })
            .collect();
        se = mean_and_stderr(&pathwise).1;
        to_go.y.row_mean(0) + mean(&initial)
    } else {
        plain
    };
    if !m.is_finite() {
        return Err(Error::NonFiniteCoefficient {
            coefficient: "J",
            arguments: "objective sample mean".into(),
        });
    }
    Ok(Estimate {
        value: spec.sense.sign() * m,
        stderr: se,
    })
}

pub fn evaluate_j(
    spec: &ProblemSpec,
    control: &ControlProcess,
    grid: &TimeGrid,
    particles: usize,
    seed: u64,
    basis: &RegressionBasis,
) -> Result<Estimate> {
    objective(
        spec,
        &solve_state(spec, control, grid, particles, seed, basis)?,
        basis,
    )
}

/// Central difference of the objective along `direction` with common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn gateaux_dj(
    spec: &ProblemSpec,
    control: &ControlProcess,
    direction: &ControlProcess,
    grid: &TimeGrid,
    particles: usize,
    seed: u64,
    basis: &RegressionBasis,
    rho: f64,
) -> Result<f64> {
    let up = evaluate_j(
        spec,
        &project(spec, control.perturbed(direction, rho)),
        grid,
        particles,
        seed,
        basis,
    )?;
    let down = evaluate_j(
        spec,
        &project(spec, control.perturbed(direction, -rho)),
        grid,
        particles,
        seed,
        basis,
    )?;
    Ok((up.value - down.value) / (2.0 * rho))
}

/// Open-loop values are clamped into the control set; other laws are clamped on evaluation.
pub fn project(spec: &ProblemSpec, control: ControlProcess) -> ControlProcess {
    match control.open_loop_values() {
        Some(v) if control.mode() == InformationMode::Trivial => {
            ControlProcess::open_loop(v.iter().map(|u| spec.project_control(*u)).collect())
        }
        _ => control,
    }
}

/// Adjoints and gradient at a solved state.
pub fn gradient_at(
    spec: &ProblemSpec,
    control: &ControlProcess,
    state: &StateSolution,
    basis: &RegressionBasis,
) -> Result<(AdjointBundle, ControlGradient)> {
    let adj = solve_adjoints(
        spec,
        &state.ensemble,
        &state.backward,
        control,
        basis,
        false,
    )?;
    let grad = control_gradient(spec, &state.ensemble, &state.backward, &adj, basis)?;
    Ok((adj, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub step0: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            step0: 0.1,
            max_iters: 200,
            tol: 1e-3,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationReport {
    /// Accepted steps.
    pub iterations: usize,
    /// Objective at every iterate, starting with the initial control.
    pub j_history: Vec<f64>,
    /// Gradient sup-norm at every iterate.
    pub grad_history: Vec<f64>,
    pub control: ControlProcess,
    pub gradient: ControlGradient,
    pub stationarity_residual: f64,
    pub converged: bool,
    /// The line search found no decrease before the gradient fell below `tol`.
    pub stalled: bool,
    pub objective: Estimate,
}

/// Initial control in the representation the information mode updates.
fn normalize(
    spec: &ProblemSpec,
    u0: &ControlProcess,
    grid: &TimeGrid,
    basis: &RegressionBasis,
) -> ControlProcess {
    match (spec.info, u0.open_loop_values()) {
        (InformationMode::Full, Some(v)) => {
            let nodes = grid.nodes();
            ControlProcess::polynomial(
                (0..nodes)
                    .map(|k| {
                        let mut c = vec![0.0; basis.degree + 1];
                        c[0] = v[k.min(v.len() - 1)];
                        c
                    })
                    .collect(),
            )
        }
        _ => u0.clone(),
    }
}

/// Projected gradient descent on the objective with halving backtracking and
/// common random numbers across iterations.
pub fn optimize(
    spec: &ProblemSpec,
    u0: &ControlProcess,
    grid: &TimeGrid,
    particles: usize,
    seed: u64,
    basis: &RegressionBasis,
    settings: &OptimizerSettings,
) -> Result<OptimizationReport> {
    let mut control = project(spec, normalize(spec, u0, grid, basis));
    let mut state = solve_state(spec, &control, grid, particles, seed, basis)?;
    let mut j = objective(spec, &state, basis)?;
    let (_, mut grad) = gradient_at(spec, &control, &state, basis)?;
    let mut j_history = vec![j.value];
    let mut grad_history = vec![grad.sup_norm()];
    let mut iterations = 0;
    let mut stalled = false;

    while grad.sup_norm() >= settings.tol && iterations < settings.max_iters {
        let direction = grad.as_direction();
        let mut step = settings.step0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let candidate = project(spec, control.perturbed(&direction, -step));
            let cand_state = solve_state(spec, &candidate, grid, particles, seed, basis)?;
            let cand_j = objective(spec, &cand_state, basis)?;
            if cand_j.value < j.value {
                accepted = Some((candidate, cand_state, cand_j));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, cand_state, cand_j)) = accepted else {
            stalled = true;
            log::warn!("line search found no decrease at iteration {iterations}");
            break;
        };
        control = candidate;
        state = cand_state;
        j = cand_j;
        grad = gradient_at(spec, &control, &state, basis)?.1;
        iterations += 1;
        j_history.push(j.value);
        grad_history.push(grad.sup_norm());
        log::debug!(
            "iteration {iterations}: J = {:.6e}, |grad| = {:.3e}, step = {step:e}",
            j.value,
            grad.sup_norm()
        );
    }

    let residual = grad.sup_norm();
    Ok(OptimizationReport {
        iterations,
        j_history,
        grad_history,
        control,
        gradient: grad,
        stationarity_residual: residual,
        converged: residual < settings.tol,
        stalled,
        objective: j,
    })
}

/// Objective of constant controls on common paths; returns `(best value, best objective)`.
pub fn scan_constant_controls(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    particles: usize,
    seed: u64,
    basis: &RegressionBasis,
    candidates: &[f64],
) -> Result<(f64, f64)> {
    let mut best = (f64::NAN, f64::INFINITY);
    for &c in candidates {
        let j = evaluate_j(
            spec,
            &ControlProcess::constant(c, grid.nodes()),
            grid,
            particles,
            seed,
            basis,
        )?;
        if j.value < best.1 {
            best = (c, j.value);
        }
    }
    Ok(best)
}

/// Mean of `values` row `k`; convenience for reports.
pub fn node_mean(values: &crate::forward::PathArray, k: usize) -> f64 {
    mean(values.row(k))
}
