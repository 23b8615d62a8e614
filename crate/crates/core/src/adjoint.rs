//! Hamiltonian, adjoint processes and the control gradient.
//!
//! With `H = f + p0 b + q0 sigma + lambda0 g + <p1, m'> + <lambda1, n'>`:
//!
//! ```text
//! d lambda0 = (H_y + E[H_n] . phi'(Y)) dt + H_z dB,        lambda0(0) = phi_y + E[phi_n] . phi'(Y(0))
//! -d p0     = (H_x + H_u u_x + E[H_m] . psi'(X)) dt - q0 dB, p0(T) = h_x + E[h_m] . psi'(X(T)) + lambda0(T)
//! -d p1     = H_m dt - q1 dB,                               p1(T) = h_m
//! d lambda1 = -E[H_n] dt,                                   lambda1(0) = E[phi_n]
//! ```
//!
//! where `psi`, `phi` are the statistic bases of the laws of `X` and `Y` and
//! `u_x` is the state sensitivity of a feedback control. The pairing terms are
//! excluded from every partial of `H`.

use rayon::prelude::*;

use crate::backward::{solve_bsde_on, BackwardDriver, BackwardSolution, TabulatedDriver};
use crate::error::{Error, Result};
use crate::forward::{ParticleEnsemble, PathArray};
use crate::problem::{Args, Coefficient, ControlProcess, InformationMode, ProblemSpec, Wrt};
use crate::regression::{RegressionBasis, Regressor};

/// Adjoint values at one `(t, particle)`.
#[derive(Debug, Clone, Copy)]
pub struct AdjointState<'a> {
    pub p0: f64,
    pub q0: f64,
    pub p1: &'a [f64],
    pub lambda0: f64,
    pub lambda1: &'a [f64],
}

/// Full Hamiltonian including the pairings `<p1, m'>` and `<lambda1, n'>`.
pub fn hamiltonian(
    spec: &ProblemSpec,
    args: &Args,
    adj: &AdjointState,
    m_prime: &[f64],
    n_prime: &[f64],
) -> f64 {
    let pair = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    spec.eval(Coefficient::RunningCost, args)
        + adj.p0 * spec.eval(Coefficient::Drift, args)
        + adj.q0 * spec.eval(Coefficient::Diffusion, args)
        + adj.lambda0 * spec.eval(Coefficient::Driver, args)
        + pair(adj.p1, m_prime)
        + pair(adj.lambda1, n_prime)
}

/// Partial of `H` without pairing terms.
pub fn hamiltonian_partial(
    spec: &ProblemSpec,
    wrt: Wrt,
    args: &Args,
    p0: f64,
    q0: f64,
    lambda0: f64,
) -> f64 {
    let mut v = spec.partial(Coefficient::RunningCost, wrt, args)
        + lambda0 * spec.partial(Coefficient::Driver, wrt, args);
    if matches!(wrt, Wrt::X | Wrt::U | Wrt::M(_)) {
        v += p0 * spec.partial(Coefficient::Drift, wrt, args)
            + q0 * spec.partial(Coefficient::Diffusion, wrt, args);
    }
    v
}

pub(crate) fn args_at<'a>(
    ens: &'a ParticleEnsemble,
    bwd: &'a BackwardSolution,
    k: usize,
    i: usize,
) -> Args<'a> {
    Args::full(
        ens.grid.t(k),
        ens.states.get(k, i),
        bwd.y.get(k, i),
        bwd.z.get(k, i),
        &ens.m_stats[k],
        &bwd.n_stats[k],
        ens.controls.get(k, i),
    )
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn par_map(n: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> Vec<f64> {
    (0..n).into_par_iter().map(f).collect()
}

/// Per-particle Dynkin integrand `b psi_j'(X) + ½ sigma^2 psi_j''(X)` at node `k`.
pub fn m_prime_samples(spec: &ProblemSpec, ens: &ParticleEnsemble, k: usize, j: usize) -> Vec<f64> {
    let t = ens.grid.t(k);
    let m = &ens.m_stats[k];
    let psi = &spec.basis_m.functions()[j];
    par_map(ens.particles(), |i| {
        let x = ens.states.get(k, i);
        let a = Args::forward(t, x, m, ens.controls.get(k, i));
        let s = spec.eval(Coefficient::Diffusion, &a);
        spec.eval(Coefficient::Drift, &a) * psi.first(x) + 0.5 * s * s * psi.second(x)
    })
}

/// Time derivative of the statistics of the law of `X` at node `k`,
/// `m'_j = E[b psi_j'(X) + ½ sigma^2 psi_j''(X)]`.
pub fn m_prime(spec: &ProblemSpec, ens: &ParticleEnsemble, k: usize) -> Vec<f64> {
    (0..spec.basis_m.len())
        .map(|j| mean(&m_prime_samples(spec, ens, k, j)))
        .collect()
}

/// Per-particle Dynkin integrand `-g phi_j'(Y) + ½ Z^2 phi_j''(Y)` at node `k`.
pub fn n_prime_samples(
    spec: &ProblemSpec,
    ens: &ParticleEnsemble,
    bwd: &BackwardSolution,
    k: usize,
    j: usize,
) -> Vec<f64> {
    let phi = &spec.basis_n.functions()[j];
    par_map(ens.particles(), |i| {
        let a = args_at(ens, bwd, k, i);
        -spec.eval(Coefficient::Driver, &a) * phi.first(a.y) + 0.5 * a.z * a.z * phi.second(a.y)
    })
}

/// Time derivative of the statistics of the law of `Y` at node `k`,
/// `n'_j = E[-g phi_j'(Y) + ½ Z^2 phi_j''(Y)]`.
pub fn n_prime(
    spec: &ProblemSpec,
    ens: &ParticleEnsemble,
    bwd: &BackwardSolution,
    k: usize,
) -> Vec<f64> {
    (0..spec.basis_n.len())
        .map(|j| mean(&n_prime_samples(spec, ens, bwd, k, j)))
        .collect()
}

/// Drift `A` and diffusion `C` of `lambda0` at step `k` given its current row.
pub(crate) fn lambda0_coefficients(
    spec: &ProblemSpec,
    ens: &ParticleEnsemble,
    bwd: &BackwardSolution,
    lambda: &[f64],
    k: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = ens.particles();
    let basis = spec.basis_n.functions();
    let lions: Vec<f64> = (0..basis.len())
        .map(|j| {
            mean(&par_map(n, |i| {
                hamiltonian_partial(
                    spec,
                    Wrt::N(j),
                    &args_at(ens, bwd, k, i),
                    0.0,
                    0.0,
                    lambda[i],
                )
            }))
        })
        .collect();
    let coeffs: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = args_at(ens, bwd, k, i);
            let mut drift = hamiltonian_partial(spec, Wrt::Y, &a, 0.0, 0.0, lambda[i]);
            for (e, phi) in lions.iter().zip(basis) {
                drift += e * phi.first(a.y);
            }
            (
                drift,
                hamiltonian_partial(spec, Wrt::Z, &a, 0.0, 0.0, lambda[i]),
            )
        })
        .collect();
    coeffs.into_iter().unzip()
}

/// Forward Euler for `lambda0` on the stored increments, `K + 1` rows.
pub fn solve_lambda0(
    spec: &ProblemSpec,
    ens: &ParticleEnsemble,
    bwd: &BackwardSolution,
) -> Result<PathArray> {
    let n = ens.particles();
    let steps = ens.grid.steps();
    let dt = ens.grid.dt();
    let mut lambda = PathArray::zeros(steps + 1, n);

    let n0 = &bwd.n_stats[0];
    let basis = spec.basis_n.functions();
    let init_args = |i: usize| Args::initial(bwd.y.get(0, i), n0);
    let lions: Vec<f64> = (0..basis.len())
        .map(|j| {
            mean(&par_map(n, |i| {
                spec.partial(Coefficient::InitialCost, Wrt::N(j), &init_args(i))
            }))
        })
        .collect();
    let start = par_map(n, |i| {
        let a = init_args(i);
        let mut v = spec.partial(Coefficient::InitialCost, Wrt::Y, &a);
        for (e, phi) in lions.iter().zip(basis) {
            v += e * phi.first(a.y);
        }
        v
    });
    lambda.row_mut(0).copy_from_slice(&start);

    for k in 0..steps {
        let current = lambda.row(k).to_vec();
        let (drift, diffusion) = lambda0_coefficients(spec, ens, bwd, &current, k);
        let db = ens.increments.row(k);
        let next = lambda.row_mut(k + 1);
        for i in 0..n {
            next[i] = current[i] + drift[i] * dt + diffusion[i] * db[i];
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                process: "lambda0",
                step: k + 1,
            });
        }
    }
    Ok(lambda)
}

/// Deterministic `lambda1` per node and `basis_n` coordinate.
pub fn solve_lambda1(
    spec: &ProblemSpec,
    ens: &ParticleEnsemble,
    bwd: &BackwardSolution,
    lambda0: &PathArray,
) -> Vec<Vec<f64>> {
    let n = ens.particles();
    let steps = ens.grid.steps();
    let dt = ens.grid.dt();
    let dim = spec.basis_n.len();
    let n0 = &bwd.n_stats[0];
    let mut out = Vec::with_capacity(steps + 1);
    let start: Vec<f64> = (0..dim)
        .map(|j| {
            mean(&par_map(n, |i| {
                spec.partial(
                    Coefficient::InitialCost,
                    Wrt::N(j),
                    &Args::initial(bwd.y.get(0, i), n0),
                )
            }))
        })
        .collect();
    out.push(start);
    for k in 0..steps {
        let lambda = lambda0.row(k);
        let next: Vec<f64> = (0..dim)
            .map(|j| {
                let e = mean(&par_map(n, |i| {
                    hamiltonian_partial(
                        spec,
                        Wrt::N(j),
                        &args_at(ens, bwd, k, i),
                        0.0,
                        0.0,
                        lambda[i],
                    )
                }));
                out[k][j] - e * dt
            })
            .collect();
        out.push(next);
    }
    out
}

/// Driver of the `p0` equation.
pub(crate) struct P0Driver<'a> {
    spec: &'a ProblemSpec,
    ens: &'a ParticleEnsemble,
    bwd: &'a BackwardSolution,
    lambda0: &'a PathArray,
    control: &'a ControlProcess,
    /// `E[f_m + lambda0 g_m]` per node and coordinate.
    running_lions: Vec<Vec<f64>>,
}

impl<'a> P0Driver<'a> {
    pub(crate) fn new(
        spec: &'a ProblemSpec,
        ens: &'a ParticleEnsemble,
        bwd: &'a BackwardSolution,
        lambda0: &'a PathArray,
        control: &'a ControlProcess,
    ) -> Self {
        let n = ens.particles();
        let running_lions = (0..=ens.grid.steps())
            .map(|k| {
                let lambda = lambda0.row(k);
                (0..spec.basis_m.len())
                    .map(|j| {
                        mean(&par_map(n, |i| {
                            hamiltonian_partial(
                                spec,
                                Wrt::M(j),
                                &args_at(ens, bwd, k, i),
                                0.0,
                                0.0,
                                lambda[i],
                            )
                        }))
                    })
                    .collect()
            })
            .collect();
        Self {
            spec,
            ens,
            bwd,
            lambda0,
            control,
            running_lions,
        }
    }

    /// `-dp0 = D dt - q0 dB` driver at given `(p0, q0)` with law aggregate `E[p0 b_m + q0 sigma_m]`.
    pub(crate) fn driver(&self, k: usize, i: usize, p: f64, q: f64, agg: &[f64]) -> f64 {
        let spec = self.spec;
        let a = args_at(self.ens, self.bwd, k, i);
        let lambda = self.lambda0.get(k, i);
        let mut d = hamiltonian_partial(spec, Wrt::X, &a, p, q, lambda);
        let ux = self.control.dx(k, a.t, a.x, &spec.control_set);
        if ux != 0.0 {
            d += hamiltonian_partial(spec, Wrt::U, &a, p, q, lambda) * ux;
        }
        for (j, psi) in spec.basis_m.functions().iter().enumerate() {
            let e = self.running_lions[k][j] + agg.get(j).copied().unwrap_or(0.0);
            d += e * psi.first(a.x);
        }
        d
    }
}

impl BackwardDriver for P0Driver<'_> {
    fn eval(&self, k: usize, i: usize, y: f64, z: f64, agg: &[f64]) -> f64 {
        self.driver(k, i, y, z, agg)
    }

    fn aggregate(&self, k: usize, ys: &[f64], zs: &[f64]) -> Vec<f64> {
        let spec = self.spec;
        (0..spec.basis_m.len())
            .map(|j| {
                mean(&par_map(ys.len(), |i| {
                    let a = args_at(self.ens, self.bwd, k, i);
                    ys[i] * spec.partial(Coefficient::Drift, Wrt::M(j), &a)
                        + zs[i] * spec.partial(Coefficient::Diffusion, Wrt::M(j), &a)
                }))
            })
            .collect()
    }

    fn is_coupled(&self) -> bool {
        !self.spec.basis_m.is_empty()
    }
}

/// Terminal value `h_x + E[h_m] . psi'(X(T)) + lambda0(T)`.
fn p0_terminal(
    spec: &ProblemSpec,
    ens: &ParticleEnsemble,
    bwd: &BackwardSolution,
    lambda0: &PathArray,
) -> Vec<f64> {
    let steps = ens.grid.steps();
    let n = ens.particles();
    let basis = spec.basis_m.functions();
    let lions: Vec<f64> = (0..basis.len())
        .map(|j| {
            mean(&par_map(n, |i| {
                spec.partial(
                    Coefficient::TerminalCost,
                    Wrt::M(j),
                    &args_at(ens, bwd, steps, i),
                )
            }))
        })
        .collect();
    par_map(n, |i| {
        let a = args_at(ens, bwd, steps, i);
        let mut v = spec.partial(Coefficient::TerminalCost, Wrt::X, &a) + lambda0.get(steps, i);
        for (e, psi) in lions.iter().zip(basis) {
            v += e * psi.first(a.x);
        }
        v
    })
}

/// `(p0, q0)` as a regression BSDE solution.
pub fn solve_p0(
    spec: &ProblemSpec,
    ens: &ParticleEnsemble,
    bwd: &BackwardSolution,
    lambda0: &PathArray,
    control: &ControlProcess,
    basis: &RegressionBasis,
) -> Result<BackwardSolution> {
    let terminal = p0_terminal(spec, ens, bwd, lambda0);
    let driver = P0Driver::new(spec, ens, bwd, lambda0, control);
    solve_bsde_on(ens, &[&ens.states, lambda0], terminal, &driver, basis, "p0")
}

/// `(p1, q1)` per `basis_m` coordinate.
pub fn solve_p1(
    spec: &ProblemSpec,
    ens: &ParticleEnsemble,
    bwd: &BackwardSolution,
    lambda0: &PathArray,
    p0: &BackwardSolution,
    basis: &RegressionBasis,
) -> Result<Vec<BackwardSolution>> {
    let n = ens.particles();
    let steps = ens.grid.steps();
    (0..spec.basis_m.len())
        .map(|j| {
            let terminal = par_map(n, |i| {
                spec.partial(
                    Coefficient::TerminalCost,
                    Wrt::M(j),
                    &args_at(ens, bwd, steps, i),
                )
            });
            let mut values = PathArray::zeros(steps + 1, n);
            for k in 0..steps {
                let row = par_map(n, |i| {
                    hamiltonian_partial(
                        spec,
                        Wrt::M(j),
                        &args_at(ens, bwd, k, i),
                        p0.y.get(k, i),
                        p0.z.get(k, i),
                        lambda0.get(k, i),
                    )
                });
                values.row_mut(k).copy_from_slice(&row);
            }
            solve_bsde_on(
                ens,
                &[&ens.states, lambda0],
                terminal,
                &TabulatedDriver(&values),
                basis,
                "p1",
            )
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AdjointBundle {
    pub p0: PathArray,
    pub q0: PathArray,
    /// One path array per `basis_m` coordinate; empty unless requested.
    pub p1: Vec<PathArray>,
    pub q1: Vec<PathArray>,
    pub lambda0: PathArray,
    /// Per node, one value per `basis_n` coordinate.
    pub lambda1: Vec<Vec<f64>>,
    pub p0_picard_iterations: usize,
}

/// Solves `lambda0` and `(p0, q0)`, and the measure adjoints `p1`, `lambda1` when
/// `measure_adjoints` is set.
pub fn solve_adjoints(
    spec: &ProblemSpec,
    ens: &ParticleEnsemble,
    bwd: &BackwardSolution,
    control: &ControlProcess,
    basis: &RegressionBasis,
    measure_adjoints: bool,
) -> Result<AdjointBundle> {
    let lambda0 = solve_lambda0(spec, ens, bwd)?;
    let p0 = solve_p0(spec, ens, bwd, &lambda0, control, basis)?;
    let (p1, q1, lambda1) = if measure_adjoints {
        let p1 = solve_p1(spec, ens, bwd, &lambda0, &p0, basis)?;
        let lambda1 = solve_lambda1(spec, ens, bwd, &lambda0);
        let (p, q) = p1.into_iter().map(|s| (s.y, s.z)).unzip();
        (p, q, lambda1)
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    Ok(AdjointBundle {
        p0_picard_iterations: p0.picard_iterations,
        p0: p0.y,
        q0: p0.z,
        p1,
        q1,
        lambda0,
        lambda1,
    })
}

/// Gradient of the minimized objective `sense.sign() * J` with respect to the control.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlGradient {
    /// `sign * E[H_u]` per node; node `K` is zero.
    Trivial(Vec<f64>),
    /// `sign * E[H_u | X_k]` as raw polynomial coefficients per node and as
    /// fitted values per particle.
    Full {
        coefficients: Vec<Vec<f64>>,
        values: PathArray,
    },
}

impl ControlGradient {
    /// Largest per-node magnitude; the root mean square over particles in full mode.
    pub fn sup_norm(&self) -> f64 {
        match self {
            Self::Trivial(g) => g.iter().fold(0.0, |m, v| m.max(v.abs())),
            Self::Full { values, .. } => (0..values.rows()).fold(0.0, |m, k| {
                let row = values.row(k);
                m.max((row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64).sqrt())
            }),
        }
    }

    /// Per-node magnitude as in [`ControlGradient::sup_norm`].
    pub fn node_norms(&self) -> Vec<f64> {
        match self {
            Self::Trivial(g) => g.iter().map(|v| v.abs()).collect(),
            Self::Full { values, .. } => (0..values.rows())
                .map(|k| {
                    let row = values.row(k);
                    (row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64).sqrt()
                })
                .collect(),
        }
    }

    /// First-order change `Σ_k E[grad_k . direction_k] Δt` along a direction.
    pub fn directional(&self, ens: &ParticleEnsemble, direction: &ControlProcess) -> f64 {
        let grid = &ens.grid;
        let dt = grid.dt();
        let n = ens.particles();
        (0..grid.steps())
            .map(|k| {
                let t = grid.t(k);
                let dir = |i: usize| direction.raw(k, t, ens.states.get(k, i));
                match self {
                    Self::Trivial(g) => g[k] * mean(&par_map(n, dir)),
                    Self::Full { values, .. } => mean(&par_map(n, |i| values.get(k, i) * dir(i))),
                }
            })
            .sum::<f64>()
            * dt
    }

    /// The gradient as a control-shaped direction.
    pub fn as_direction(&self) -> ControlProcess {
        match self {
            Self::Trivial(g) => ControlProcess::open_loop(g.clone()),
            Self::Full { coefficients, .. } => ControlProcess::polynomial(coefficients.clone()),
        }
    }
}

/// `H_u = f_u + p0 b_u + q0 sigma_u + lambda0 g_u` per particle at step `k`.
pub fn control_sensitivity(
    spec: &ProblemSpec,
    ens: &ParticleEnsemble,
    bwd: &BackwardSolution,
    adj: &AdjointBundle,
    k: usize,
) -> Vec<f64> {
    par_map(ens.particles(), |i| {
        hamiltonian_partial(
            spec,
            Wrt::U,
            &args_at(ens, bwd, k, i),
            adj.p0.get(k, i),
            adj.q0.get(k, i),
            adj.lambda0.get(k, i),
        )
    })
}

/// Plain means per node in trivial information mode, regression on the state in full mode.
pub fn control_gradient(
    spec: &ProblemSpec,
    ens: &ParticleEnsemble,
    bwd: &BackwardSolution,
    adj: &AdjointBundle,
    basis: &RegressionBasis,
) -> Result<ControlGradient> {
    let steps = ens.grid.steps();
    let sign = spec.sense.sign();
    match spec.info {
        InformationMode::Trivial => {
            let mut g: Vec<f64> = (0..steps)
                .map(|k| sign * mean(&control_sensitivity(spec, ens, bwd, adj, k)))
                .collect();
            g.push(0.0);
            Ok(ControlGradient::Trivial(g))
        }
        InformationMode::Full => {
            let n = ens.particles();
            let mut values = PathArray::zeros(steps + 1, n);
            let mut coefficients = Vec::with_capacity(steps + 1);
            for k in 0..steps {
                let hu: Vec<f64> = control_sensitivity(spec, ens, bwd, adj, k)
                    .into_iter()
                    .map(|v| sign * v)
                    .collect();
                let reg = Regressor::fit(ens.states.row(k), basis, k)?;
                let mut raw = reg.raw_coefficients(&hu);
                raw.resize(basis.degree + 1, 0.0);
                values.row_mut(k).copy_from_slice(&reg.project(&hu));
                coefficients.push(raw);
            }
            coefficients.push(vec![0.0; basis.degree + 1]);
            Ok(ControlGradient::Full {
                coefficients,
                values,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backward::solve_backward;
    use crate::forward::{simulate_forward, TimeGrid};
    use crate::portfolio::PortfolioParams;
    use crate::presets;
    use crate::problem::Args;

    #[test]
    fn hamiltonian_examples() {
        let spec = presets::gbm(0.05, 0.2, 1.0, 1.0, 0.0, 0.0).unwrap();
        let a = Args::full(0.0, 1.0, 1.0, 0.3, &[1.0, 1.0, 1.0], &[], 0.0);
        let zero = AdjointState {
            p0: 0.0,
            q0: 0.0,
            p1: &[0.0; 3],
            lambda0: 0.0,
            lambda1: &[],
        };
        assert_eq!(hamiltonian(&spec, &a, &zero, &[1.0; 3], &[]), 0.0);

        let params = PortfolioParams::constant(0.04, 0.2, 0.05, 1.0, 1.0).unwrap();
        let p = presets::portfolio_proportion(&params).unwrap();
        let (x, pi, z, ybar) = (2.0, 0.5, 0.3, 1.5);
        let n = [ybar];
        let a = Args::full(0.2, x, 1.1, z, &[], &n, pi);
        let adj = AdjointState {
            p0: 0.7,
            q0: -0.2,
            p1: &[],
            lambda0: 1.3,
            lambda1: &[0.4],
        };
        let nprime = [0.25];
        let expected = 0.7 * 0.04 * pi * x - 0.2 * 0.2 * pi * x
            + 1.3 * (-0.05 * ybar - 0.5 * z * z)
            + 0.4 * 0.25;
        assert!((hamiltonian(&p, &a, &adj, &[], &nprime) - expected).abs() < 1e-15);
    }

    #[test]
    fn dynkin_second_moment() {
        let spec = presets::mean_reverting(0.0, 0.3, 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let ens =
            simulate_forward(&spec, &ControlProcess::constant(0.0, 11), &grid, 200, 1).unwrap();
        let mp = m_prime(&spec, &ens, 4);
        assert!(mp[0].abs() < 1e-15);
        assert!((mp[1] - 0.09).abs() < 1e-15);
    }

    #[test]
    fn lambda0_constant_without_y_dependence() {
        let spec = presets::gbm(0.05, 0.2, 1.0, 1.0, 0.0, 0.0).unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let ens =
            simulate_forward(&spec, &ControlProcess::constant(0.0, 21), &grid, 500, 1).unwrap();
        let bwd = solve_backward(&spec, &ens, &RegressionBasis::default()).unwrap();
        let l = solve_lambda0(&spec, &ens, &bwd).unwrap();
        assert!(l.as_slice().iter().all(|v| *v == 1.0));
        assert!(solve_lambda1(&spec, &ens, &bwd, &l)
            .iter()
            .all(|v| v.is_empty()));
    }

    #[test]
    fn portfolio_lambda0_is_positive_and_discounted() {
        let params = PortfolioParams::constant(0.04, 0.2, 0.05, 1.0, 1.0).unwrap();
        let spec = presets::portfolio(&params).unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let ens =
            simulate_forward(&spec, &ControlProcess::constant(1.0, 51), &grid, 20_000, 3).unwrap();
        let bwd = solve_backward(&spec, &ens, &RegressionBasis::default()).unwrap();
        let adj = solve_adjoints(
            &spec,
            &ens,
            &bwd,
            &ControlProcess::constant(1.0, 51),
            &RegressionBasis::default(),
            false,
        )
        .unwrap();
        let lo = adj
            .lambda0
            .as_slice()
            .iter()
            .fold(f64::INFINITY, |a, b| a.min(*b));
        let zr = bwd.z.as_slice().iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(lo > 0.0, "min lambda0 {lo}, max |Z| {zr}");
        let adj = AdjointBundle {
            lambda1: solve_lambda1(&spec, &ens, &bwd, &adj.lambda0),
            ..adj
        };
        for k in [10, 50] {
            let row = adj.lambda0.row(k);
            let (e, se) = crate::portfolio::mean_and_stderr(row);
            assert!(
                (e - (-0.05 * grid.t(k)).exp()).abs() < 3.0 * se + 1e-4,
                "{k}: {e} ± {se}"
            );
        }
        // lambda1' = +r0 E[lambda0]
        let expected: f64 = (0..50).map(|k| 0.05 * adj.lambda0.row_mean(k) * 0.02).sum();
        assert!((adj.lambda1[50][0] - expected).abs() < 1e-12);
        assert!(adj.p1.is_empty());
    }

    #[test]
    fn p0_constant_terminal() {
        // h(x) = x via gbm with zero drift terms: p0 = 1 + lambda0(T) = 1 + 1
        let spec = ProblemSpec::builder("unit", 1.0, 1.0)
            .coefficient(Coefficient::Diffusion, |_| 0.2)
            .coefficient(Coefficient::TerminalCost, |a| a.x)
            .partial(Coefficient::TerminalCost, Wrt::X, |_| 1.0)
            .build()
            .unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let u = ControlProcess::constant(0.0, 11);
        let ens = simulate_forward(&spec, &u, &grid, 300, 1).unwrap();
        let bwd = solve_backward(&spec, &ens, &RegressionBasis::default()).unwrap();
        let adj = solve_adjoints(&spec, &ens, &bwd, &u, &RegressionBasis::default(), true).unwrap();
        assert!(adj.lambda0.as_slice().iter().all(|v| *v == 0.0));
        assert!(adj.p0.as_slice().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(adj.q0.as_slice().iter().all(|v| v.abs() < 1e-12));
        let g = control_gradient(&spec, &ens, &bwd, &adj, &RegressionBasis::default()).unwrap();
        assert_eq!(g.sup_norm(), 0.0);
    }

    #[test]
    fn p1_mean_coordinate() {
        let spec = ProblemSpec::builder("mean_cost", 1.0, 1.0)
            .coefficient(Coefficient::Diffusion, |_| 0.2)
            .coefficient(Coefficient::TerminalCost, |a| a.m[0])
            .partial(Coefficient::TerminalCost, Wrt::M(0), |_| 1.0)
            .basis_m(crate::measure::StatisticBasis::monomials(1))
            .build()
            .unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let u = ControlProcess::constant(0.0, 11);
        let ens = simulate_forward(&spec, &u, &grid, 300, 1).unwrap();
        let bwd = solve_backward(&spec, &ens, &RegressionBasis::default()).unwrap();
        let adj = solve_adjoints(&spec, &ens, &bwd, &u, &RegressionBasis::default(), true).unwrap();
        assert!(adj.p1[0].as_slice().iter().all(|v| (v - 1.0).abs() < 1e-12));
        // the Lions term moves h_m into p0
        assert!(adj.p0.as_slice().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }
}
