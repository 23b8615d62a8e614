//! Empirical probability measures on the real line.
//!
//! Measures are compared through the Fourier-weighted norm
//!
//! ```text
//! ||mu||^2 = ∫ |mu_hat(y)|^2 exp(-y^2) dy,   mu_hat(y) = ∫ exp(i x y) dmu(x)
//! ```
//!
//! whose weight is exactly the Gauss–Hermite weight, so every integral here is
//! a 64-node Gauss–Hermite sum. Dependence of coefficients on a measure is
//! carried by a finite [`StatisticBasis`]: a bounded linear functional on
//! measures is stored as coefficients against `<m, phi_j>`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::quadrature::GaussHermite;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Weighted atoms `sum_j w_j delta_{x_j}`. Duplicate locations are kept as given.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    locations: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(locations: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::InvalidInput(
                "measure needs at least one atom".into(),
            ));
        }
        if locations.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} locations but {} weights",
                locations.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "atom weight {w} is not a finite nonnegative number"
            )));
        }
        if locations.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("atom location is not finite".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { locations, weights })
    }

    /// Equal-weight empirical measure of a sample.
    pub fn uniform(locations: &[f64]) -> Result<Self> {
        let n = locations.len();
        if n == 0 {
            return Err(Error::InvalidInput(
                "measure needs at least one atom".into(),
            ));
        }
        let w = 1.0 / n as f64;
        // 1/n summed n times may drift a few ulps from 1; well inside tolerance.
        Self::new(locations.to_vec(), vec![w; n])
    }

    pub fn dirac(x: f64) -> Self {
        Self {
            locations: vec![x],
            weights: vec![1.0],
        }
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.locations
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
    }
}

/// `mu_hat(y) = sum_j w_j exp(i x_j y)`.
pub fn fourier_transform_at(mu: &EmpiricalMeasure, y: f64) -> Complex64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, w) in mu.atoms() {
        let (s, c) = (x * y).sin_cos();
        re += w * c;
        im += w * s;
    }
    Complex64::new(re, im)
}

fn transform_on_nodes(mu: &EmpiricalMeasure, rule: &GaussHermite) -> Vec<Complex64> {
    rule.nodes
        .iter()
        .map(|&y| fourier_transform_at(mu, y))
        .collect()
}

/// `∫ |mu_hat(y)|^2 exp(-y^2) dy` for a single realization; lies in `(0, sqrt(pi)]`.
pub fn norm_squared(mu: &EmpiricalMeasure) -> f64 {
    let rule = GaussHermite::measure_rule();
    transform_on_nodes(mu, rule)
        .iter()
        .zip(&rule.weights)
        .map(|(f, w)| w * f.norm_sqr())
        .sum()
}

/// `∫ |mu_hat(y) - eta_hat(y)|^2 exp(-y^2) dy`.
pub fn distance_squared(mu: &EmpiricalMeasure, eta: &EmpiricalMeasure) -> f64 {
    let rule = GaussHermite::measure_rule();
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&y, w)| w * (fourier_transform_at(mu, y) - fourier_transform_at(eta, y)).norm_sqr())
        .sum()
}

/// Sesquilinear form `∫ mu_hat(y) conj(eta_hat(y)) exp(-y^2) dy`.
///
/// `distance_squared(mu, eta) = ||mu||^2 + ||eta||^2 - 2 Re inner_product(mu, eta)`.
pub fn inner_product(mu: &EmpiricalMeasure, eta: &EmpiricalMeasure) -> Complex64 {
    let rule = GaussHermite::measure_rule();
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&y, &w)| fourier_transform_at(mu, y) * fourier_transform_at(eta, y).conj() * w)
        .sum()
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A test function with its first two derivatives.
#[derive(Clone)]
pub enum TestFunction {
    /// `x^p`, `p >= 1`.
    Monomial(u32),
    Custom {
        name: String,
        value: ScalarFn,
        first: ScalarFn,
        second: ScalarFn,
    },
}

impl TestFunction {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            TestFunction::Monomial(p) => x.powi(*p as i32),
            TestFunction::Custom { value, .. } => value(x),
        }
    }

    pub fn first(&self, x: f64) -> f64 {
        match self {
            TestFunction::Monomial(0) => 0.0,
            TestFunction::Monomial(p) => *p as f64 * x.powi(*p as i32 - 1),
            TestFunction::Custom { first, .. } => first(x),
        }
    }

    pub fn second(&self, x: f64) -> f64 {
        match self {
            TestFunction::Monomial(p) if *p < 2 => 0.0,
            TestFunction::Monomial(p) => (*p * (*p - 1)) as f64 * x.powi(*p as i32 - 2),
            TestFunction::Custom { second, .. } => second(x),
        }
    }
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Monomial(p) => write!(f, "x^{p}"),
            TestFunction::Custom { name, .. } => write!(f, "{name}"),
        }
    }
}

/// Ordered test functions `phi_j` defining the coordinates `<m, phi_j>` of a measure.
#[derive(Debug, Clone)]
pub struct StatisticBasis {
    functions: Vec<TestFunction>,
}

impl StatisticBasis {
    pub fn new(functions: Vec<TestFunction>) -> Self {
        Self { functions }
    }

    /// `x, x^2, ..., x^degree`.
    pub fn monomials(degree: u32) -> Self {
        Self::new((1..=degree).map(TestFunction::Monomial).collect())
    }

    /// No measure dependence at all.
    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[TestFunction] {
        &self.functions
    }

    /// Equal-weight statistics of a sample, summed in index order.
    pub fn sample_statistics(&self, sample: &[f64]) -> Vec<f64> {
        let n = sample.len() as f64;
        self.functions
            .iter()
            .map(|phi| sample.iter().map(|&x| phi.value(x)).sum::<f64>() / n)
            .collect()
    }
}

/// `<mu, phi_j> = sum_i w_i phi_j(x_i)` for each basis function.
pub fn statistics(mu: &EmpiricalMeasure, basis: &StatisticBasis) -> Vec<f64> {
    basis
        .functions
        .iter()
        .map(|phi| mu.atoms().map(|(x, w)| w * phi.value(x)).sum())
        .collect()
}

/// Outcome of [`paired_distance_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedDistanceReport {
    pub trials: usize,
    /// Trials with `distance^2 > sqrt(pi) * mean squared gap + 1e-12`.
    pub violations: usize,
    /// Largest `distance^2 / (sqrt(pi) * mean squared gap)`.
    pub max_ratio: f64,
}

/// Draws `trials` pairs of uniform ensembles `x_i ~ N(0, 1)`, `y_i = x_i + 0.5 e_i`
/// and checks `distance^2 <= sqrt(pi) * mean_i (x_i - y_i)^2`.
pub fn paired_distance_check(trials: usize, atoms: usize, seed: u64) -> PairedDistanceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PairedDistanceReport {
        trials,
        violations: 0,
        max_ratio: 0.0,
    };
    for _ in 0..trials {
        let xs: Vec<f64> = (0..atoms).map(|_| rng.sample(StandardNormal)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| x + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let gap = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / atoms as f64;
        let bound = std::f64::consts::PI.sqrt() * gap;
        let d = distance_squared(
            &EmpiricalMeasure::uniform(&xs).expect("finite atoms"),
            &EmpiricalMeasure::uniform(&ys).expect("finite atoms"),
        );
        if d > bound + 1e-12 {
            report.violations += 1;
        }
        report.max_ratio = report.max_ratio.max(d / bound);
    }
    report
}
