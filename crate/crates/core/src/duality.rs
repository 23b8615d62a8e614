//! Duality identities between a reference and a perturbed solution on common
//! paths, and a concavity spot-check of the Hamiltonian.
//!
//! Writing `δ` for alternative minus reference, the Itô product rule gives
//!
//! ```text
//! (1) E[p0(T) δX(T)]                  = E ∫ (p0 δb + q0 δsigma - δX D) dt
//! (2) E[p1(T)] . δm(T)                = ∫ (E[p1] . δm' - E[H_m] . δm) dt
//! (3) E[λ0(T) δY(T)] - E[λ0(0) δY(0)] = E ∫ (-λ0 δg + δY A + δZ C) dt
//! (4) λ1(T) . δn(T) - λ1(0) . δn(0)   = ∫ (λ1 . δn' - E[H_n] . δn) dt
//! ```
//!
//! with `D` the driver of `p0` and `A`, `C` the drift and diffusion of `λ0`.
//! The identities are exact for finite perturbations in continuous time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adjoint::{
    args_at, hamiltonian, hamiltonian_partial, lambda0_coefficients, m_prime_samples, mean,
    n_prime_samples, par_map, AdjointBundle, AdjointState, P0Driver,
};
use crate::backward::BackwardDriver;
use crate::error::{Error, Result};
use crate::optimize::{Estimate, StateSolution};
use crate::portfolio::mean_and_stderr;
use crate::problem::{Args, Coefficient, ControlProcess, ProblemSpec, Wrt};

/// `LHS - RHS` of the four identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityResiduals {
    pub residuals: [Estimate; 4],
}

fn estimate(samples: &[f64]) -> Estimate {
    let (value, stderr) = mean_and_stderr(samples);
    Estimate { value, stderr }
}

/// Requires `adjoints` solved with the measure adjoints at the reference state,
/// and both states simulated from the same increments.
pub fn duality_residuals(
    spec: &ProblemSpec,
    reference: &StateSolution,
    adjoints: &AdjointBundle,
    control: &ControlProcess,
    alternative: &StateSolution,
) -> Result<DualityResiduals> {
    let (er, br) = (&reference.ensemble, &reference.backward);
    let (ea, ba) = (&alternative.ensemble, &alternative.backward);
    if er.increments.as_slice() != ea.increments.as_slice() {
        return Err(Error::InvalidInput(
            "duality needs both solutions on common paths".into(),
        ));
    }
    if adjoints.p1.len() != spec.basis_m.len() || adjoints.lambda1.len() != er.grid.nodes() {
        return Err(Error::InvalidInput(
            "duality needs the measure adjoints p1 and lambda1".into(),
        ));
    }
    let n = er.particles();
    let steps = er.grid.steps();
    let dt = er.grid.dt();
    let dx = |k: usize, i: usize| ea.states.get(k, i) - er.states.get(k, i);
    let fwd = |which: Coefficient, k: usize, i: usize| {
        let t = er.grid.t(k);
        let alt = Args::forward(
            t,
            ea.states.get(k, i),
            &ea.m_stats[k],
            ea.controls.get(k, i),
        );
        let re = Args::forward(
            t,
            er.states.get(k, i),
            &er.m_stats[k],
            er.controls.get(k, i),
        );
        spec.eval(which, &alt) - spec.eval(which, &re)
    };

    // (1)
    let p0_driver = P0Driver::new(spec, er, br, &adjoints.lambda0, control);
    let mut first: Vec<f64> = (0..n)
        .map(|i| adjoints.p0.get(steps, i) * dx(steps, i))
        .collect();
    for k in 0..steps {
        let agg = p0_driver.aggregate(k, adjoints.p0.row(k), adjoints.q0.row(k));
        let rhs = par_map(n, |i| {
            let d = p0_driver.driver(k, i, adjoints.p0.get(k, i), adjoints.q0.get(k, i), &agg);
            adjoints.p0.get(k, i) * fwd(Coefficient::Drift, k, i)
                + adjoints.q0.get(k, i) * fwd(Coefficient::Diffusion, k, i)
                - dx(k, i) * d
        });
        for (f, r) in first.iter_mut().zip(&rhs) {
            *f -= r * dt;
        }
    }

    // (2)
    let psi = spec.basis_m.functions();
    let mut second = vec![0.0; n];
    for (j, f) in psi.iter().enumerate() {
        let e_t = mean(adjoints.p1[j].row(steps));
        for (i, s) in second.iter_mut().enumerate() {
            *s += e_t * (f.value(ea.states.get(steps, i)) - f.value(er.states.get(steps, i)));
        }
        for k in 0..steps {
            let e_k = mean(adjoints.p1[j].row(k));
            let h_m = mean(&par_map(n, |i| {
                hamiltonian_partial(
                    spec,
                    Wrt::M(j),
                    &args_at(er, br, k, i),
                    adjoints.p0.get(k, i),
                    adjoints.q0.get(k, i),
                    adjoints.lambda0.get(k, i),
                )
            }));
            let ma = m_prime_samples(spec, ea, k, j);
            let mr = m_prime_samples(spec, er, k, j);
            for (i, s) in second.iter_mut().enumerate() {
                let dm = f.value(ea.states.get(k, i)) - f.value(er.states.get(k, i));
                *s -= (e_k * (ma[i] - mr[i]) - h_m * dm) * dt;
            }
        }
    }

    // (3)
    let dy = |k: usize, i: usize| ba.y.get(k, i) - br.y.get(k, i);
    let mut third: Vec<f64> = (0..n)
        .map(|i| {
            adjoints.lambda0.get(steps, i) * dy(steps, i) - adjoints.lambda0.get(0, i) * dy(0, i)
        })
        .collect();
    for k in 0..steps {
        let lambda = adjoints.lambda0.row(k);
        let (a, c) = lambda0_coefficients(spec, er, br, lambda, k);
        let rhs = par_map(n, |i| {
            let dg = spec.eval(Coefficient::Driver, &args_at(ea, ba, k, i))
                - spec.eval(Coefficient::Driver, &args_at(er, br, k, i));
            let dz = ba.z.get(k, i) - br.z.get(k, i);
            -lambda[i] * dg + dy(k, i) * a[i] + dz * c[i]
        });
        for (f, r) in third.iter_mut().zip(&rhs) {
            *f -= r * dt;
        }
    }

    // (4)
    let phi = spec.basis_n.functions();
    let mut fourth = vec![0.0; n];
    for (j, f) in phi.iter().enumerate() {
        let l1 = |k: usize| adjoints.lambda1[k][j];
        let dn = |k: usize, i: usize| f.value(ba.y.get(k, i)) - f.value(br.y.get(k, i));
        for (i, s) in fourth.iter_mut().enumerate() {
            *s += l1(steps) * dn(steps, i) - l1(0) * dn(0, i);
        }
        for k in 0..steps {
            let lambda = adjoints.lambda0.row(k);
            let h_n = mean(&par_map(n, |i| {
                hamiltonian_partial(spec, Wrt::N(j), &args_at(er, br, k, i), 0.0, 0.0, lambda[i])
            }));
            let na = n_prime_samples(spec, ea, ba, k, j);
            let nr = n_prime_samples(spec, er, br, k, j);
            for (i, s) in fourth.iter_mut().enumerate() {
                *s -= (l1(k) * (na[i] - nr[i]) - h_n * dn(k, i)) * dt;
            }
        }
    }

    Ok(DualityResiduals {
        residuals: [
            estimate(&first),
            estimate(&second),
            estimate(&third),
            estimate(&fourth),
        ],
    })
}

/// Sign of the Hamiltonian's curvature along random segments in `(x, y, z, u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcavityReport {
    pub segments: usize,
    pub concave: usize,
    pub convex: usize,
    /// Largest second difference observed (positive values contradict concavity).
    pub max_second_difference: f64,
}

/// Second differences of `H` with frozen adjoints at random `(node, particle)` pairs.
pub fn concavity_spot_check(
    spec: &ProblemSpec,
    state: &StateSolution,
    adjoints: &AdjointBundle,
    segments: usize,
    seed: u64,
) -> ConcavityReport {
    let (ens, bwd) = (&state.ensemble, &state.backward);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConcavityReport {
        segments,
        concave: 0,
        convex: 0,
        max_second_difference: f64::NEG_INFINITY,
    };
    let h = 1e-2;
    for _ in 0..segments {
        let k = rng.random_range(0..ens.grid.steps());
        let i = rng.random_range(0..ens.particles());
        let dir: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let base = args_at(ens, bwd, k, i);
        let adj = AdjointState {
            p0: adjoints.p0.get(k, i),
            q0: adjoints.q0.get(k, i),
            p1: &[],
            lambda0: adjoints.lambda0.get(k, i),
            lambda1: &[],
        };
        let at = |s: f64| {
            let mut a = base;
            a.x += s * dir[0];
            a.y += s * dir[1];
            a.z += s * dir[2];
            a.u = spec.project_control(a.u + s * dir[3]);
            hamiltonian(spec, &a, &adj, &[], &[])
        };
        let second = (at(h) - 2.0 * at(0.0) + at(-h)) / (h * h);
        if second <= 1e-9 {
            report.concave += 1;
        }
        if second >= -1e-9 {
            report.convex += 1;
        }
        report.max_second_difference = report.max_second_difference.max(second);
    }
    report
}
