//! Euler–Maruyama particle solver for the McKean–Vlasov forward equation.
//!
//! ```text
//! X_i(t_{k+1}) = X_i(t_k) + b(t_k, X_i, stats(mu_k), u_ik) dt + sigma(...) dB_i(t_k)
//! ```
//!
//! where `mu_k` is the equal-weight empirical measure of the particles at
//! `t_k`. Statistics of step `k` are frozen (summed in index order) before
//! particles advance, so results do not depend on the rayon thread count.
//!
//! Brownian increments come from one ChaCha stream per particle, keyed by
//! `(seed, particle)` and read sequentially over steps. A particle's path never
//! depends on how many other particles are simulated, which is what makes
//! common random numbers work across optimizer iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measure::{distance_squared, EmpiricalMeasure};
use crate::problem::{Args, Coefficient, ControlProcess, ProblemSpec};

/// Uniform grid `t_k = k T / K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidInput(
                "time grid needs at least one step".into(),
            ));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn t(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }
}

/// Row-major `rows x particles` array; row `k` holds every particle at node `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathArray {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PathArray {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn particles(&self) -> usize {
        self.cols
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.cols + i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row_mean(&self, k: usize) -> f64 {
        self.row(k).iter().sum::<f64>() / self.cols as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Brownian increments `dB_i(t_k) ~ N(0, dt)`, `rows = K`.
pub fn brownian_increments(seed: u64, particles: usize, grid: &TimeGrid) -> PathArray {
    let steps = grid.steps();
    let scale = grid.dt().sqrt();
    let columns: Vec<Vec<f64>> = (0..particles)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            (0..steps)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut out = PathArray::zeros(steps, particles);
    for (i, col) in columns.iter().enumerate() {
        for (k, v) in col.iter().enumerate() {
            out.data[k * particles + i] = *v;
        }
    }
    out
}

/// Simulated particle system: states, the increments that generated them,
/// the projected control values actually applied, and per-node law statistics.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub grid: TimeGrid,
    pub seed: u64,
    /// `X_i(t_k)`, `K + 1` rows.
    pub states: PathArray,
    /// `dB_i(t_k)`, `K` rows.
    pub increments: PathArray,
    /// `u_i(t_k)` after projection, `K + 1` rows.
    pub controls: PathArray,
    /// Statistics of the empirical law of X per node against `basis_m`.
    pub m_stats: Vec<Vec<f64>>,
}

impl ParticleEnsemble {
    pub fn particles(&self) -> usize {
        self.states.particles()
    }

    /// Empirical law of X at node `k`.
    pub fn measure(&self, k: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.states.row(k)).expect("ensemble has particles")
    }

    /// Empirical laws at every node.
    pub fn measure_flow(&self) -> MeasureFlow {
        MeasureFlow {
            measures: (0..self.grid.nodes()).map(|k| self.measure(k)).collect(),
        }
    }
}

/// One empirical measure per grid node.
#[derive(Debug, Clone)]
pub struct MeasureFlow {
    pub measures: Vec<EmpiricalMeasure>,
}

pub fn simulate_forward(
    spec: &ProblemSpec,
    control: &ControlProcess,
    grid: &TimeGrid,
    particles: usize,
    seed: u64,
) -> Result<ParticleEnsemble> {
    let increments = brownian_increments(seed, particles, grid);
    simulate_with_increments(spec, control, grid, increments, seed)
}

/// Forward pass over prescribed increments (`K` rows).
pub fn simulate_with_increments(
    spec: &ProblemSpec,
    control: &ControlProcess,
    grid: &TimeGrid,
    increments: PathArray,
    seed: u64,
) -> Result<ParticleEnsemble> {
    let n = increments.particles();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 particles for an interacting empirical law, got {n}"
        )));
    }
    if increments.rows() != grid.steps() {
        return Err(Error::InvalidInput(
            "increment rows do not match the grid".into(),
        ));
    }
    let steps = grid.steps();
    let dt = grid.dt();
    let mut states = PathArray::zeros(steps + 1, n);
    let mut controls = PathArray::zeros(steps + 1, n);
    let mut m_stats = Vec::with_capacity(steps + 1);
    states.row_mut(0).fill(spec.x0);

    for k in 0..=steps {
        let t = grid.t(k);
        let stats = spec.basis_m.sample_statistics(states.row(k));
        {
            let xs = states.row(k).to_vec();
            controls
                .row_mut(k)
                .par_iter_mut()
                .zip(xs.par_iter())
                .for_each(|(u, &x)| *u = control.value(k, t, x, &spec.control_set));
        }
        if k < steps {
            let (head, tail) = states.data.split_at_mut((k + 1) * n);
            let current = &head[k * n..];
            let next = &mut tail[..n];
            let us = controls.row(k);
            let db = increments.row(k);
            next.par_iter_mut().enumerate().for_each(|(i, out)| {
                let a = Args::forward(t, current[i], &stats, us[i]);
                *out = current[i]
                    + spec.eval(Coefficient::Drift, &a) * dt
                    + spec.eval(Coefficient::Diffusion, &a) * db[i];
            });
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    process: "X",
                    step: k + 1,
                });
            }
        }
        m_stats.push(stats);
    }

    Ok(ParticleEnsemble {
        grid: *grid,
        seed,
        states,
        increments,
        controls,
        m_stats,
    })
}

/// Per-step measure increments against the paired-sample bound.
#[derive(Debug, Clone)]
pub struct LipschitzReport {
    /// `max_k distance^2(mu_{k+1}, mu_k) / dt`.
    pub max_ratio: f64,
    pub ratios: Vec<f64>,
    /// `sqrt(pi) * mean_i (X_i(t_{k+1}) - X_i(t_k))^2` per step.
    pub paired_bounds: Vec<f64>,
    /// Steps where `distance^2 > paired bound + 1e-12`.
    pub bound_violations: usize,
}

/// Numerical witness of absolute continuity of `t -> M(t)`.
pub fn measure_flow_lipschitz_report(ensemble: &ParticleEnsemble) -> LipschitzReport {
    let grid = ensemble.grid;
    let dt = grid.dt();
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let per_step: Vec<(f64, f64)> = (0..grid.steps())
        .into_par_iter()
        .map(|k| {
            let a = ensemble.states.row(k);
            let b = ensemble.states.row(k + 1);
            let d = distance_squared(&ensemble.measure(k + 1), &ensemble.measure(k));
            let gap = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
            (d, sqrt_pi * gap)
        })
        .collect();
    let ratios: Vec<f64> = per_step.iter().map(|(d, _)| d / dt).collect();
    LipschitzReport {
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        bound_violations: per_step.iter().filter(|(d, b)| *d > b + 1e-12).count(),
        paired_bounds: per_step.iter().map(|(_, b)| *b).collect(),
        ratios,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.dt(), 0.5);
        assert_eq!(g.t(0), 0.0);
        assert_eq!(g.t(4), 2.0);
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn deterministic_ode_is_exact() {
        let spec = ProblemSpec::builder("ode", 0.5, 1.0)
            .coefficient(Coefficient::Drift, |_| 0.3)
            .build()
            .unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let ens = simulate_forward(&spec, &ControlProcess::constant(0.0, 11), &grid, 4, 1).unwrap();
        for k in 0..=10 {
            for &x in ens.states.row(k) {
                assert!((x - (0.5 + 0.3 * grid.t(k))).abs() < 1e-14);
            }
        }
        let report = measure_flow_lipschitz_report(&ens);
        assert_eq!(report.bound_violations, 0);
    }

    #[test]
    fn constant_flow_has_zero_ratio() {
        let spec = ProblemSpec::builder("still", 1.0, 1.0).build().unwrap();
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let ens = simulate_forward(&spec, &ControlProcess::constant(0.0, 6), &grid, 8, 3).unwrap();
        assert_eq!(measure_flow_lipschitz_report(&ens).max_ratio, 0.0);
    }

    #[test]
    fn rejects_single_particle() {
        let spec = presets::gbm(0.05, 0.2, 1.0, 1.0, 0.0, 0.0).unwrap();
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let err =
            simulate_forward(&spec, &ControlProcess::constant(0.0, 6), &grid, 1, 3).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn reports_blow_up_step() {
        let spec = ProblemSpec::builder("blowup", 1.0, 1.0)
            .coefficient(Coefficient::Drift, |a| a.x.powi(8) * 1e30)
            .build()
            .unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let err =
            simulate_forward(&spec, &ControlProcess::constant(0.0, 21), &grid, 4, 3).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { process: "X", .. }));
    }

    #[test]
    fn paths_are_reproducible_and_prefix_stable() {
        let spec = presets::gbm(0.05, 0.2, 1.0, 1.0, 0.0, 0.0).unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let u = ControlProcess::constant(0.0, 21);
        let a = simulate_forward(&spec, &u, &grid, 50, 9).unwrap();
        let b = simulate_forward(&spec, &u, &grid, 50, 9).unwrap();
        assert_eq!(a.states, b.states);
        let c = simulate_forward(&spec, &u, &grid, 80, 9).unwrap();
        for k in 0..=20 {
            // GBM does not interact, so the first 50 particles are untouched
            assert_eq!(&c.states.row(k)[..50], a.states.row(k));
        }
        assert_eq!(&c.increments.row(3)[..50], a.increments.row(3));
    }

    #[test]
    fn mean_field_drift_conserves_mean() {
        let spec = presets::mean_reverting(1.0, 0.2, 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let ens =
            simulate_forward(&spec, &ControlProcess::constant(0.0, 51), &grid, 20_000, 5).unwrap();
        let mut drift_free = vec![1.0; 20_000];
        for k in 0..50 {
            for (x, d) in drift_free.iter_mut().zip(ens.increments.row(k)) {
                *x += 0.2 * d;
            }
            let expected = drift_free.iter().sum::<f64>() / 20_000.0;
            // the interaction term sums to zero across particles
            assert!((ens.states.row_mean(k + 1) - expected).abs() < 1e-12);
        }
        for k in [10, 25, 50] {
            let se = 0.2 * (grid.t(k) / 20_000.0).sqrt();
            let mean = ens.states.row_mean(k);
            assert!((mean - 1.0).abs() < 3.0 * se, "k={k} mean={mean} se={se}");
        }
    }
}
