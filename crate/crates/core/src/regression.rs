//! Polynomial ridge regression on the state, the conditional-expectation
//! estimator behind every backward solve.
//!
//! Regressors are standardized before building powers. The ridge penalty is
//! not applied to the intercept, so a degree-0 fit is the plain sample mean and
//! every fit preserves the sample mean of its target.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Degree and ridge of the polynomial regression basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionBasis {
    pub degree: usize,
    pub ridge: f64,
    /// Subtract the fitted martingale increment `Z_k ΔB_k` from backward
    /// regression targets. Unbiased; removes the sample noise of `mean(ΔB_k)`.
    pub control_variate: bool,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self {
            degree: 3,
            ridge: 1e-8,
            control_variate: false,
        }
    }
}

impl RegressionBasis {
    pub fn new(degree: usize, ridge: f64) -> Result<Self> {
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "ridge must be a nonnegative number, got {ridge}"
            )));
        }
        Ok(Self {
            degree,
            ridge,
            control_variate: false,
        })
    }

    pub fn with_control_variate(self, on: bool) -> Self {
        Self {
            control_variate: on,
            ..self
        }
    }
}

const MAX_RIDGE_RETRIES: usize = 3;

/// Exponent tuples of all monomials in `vars` variables of total degree at most
/// `degree`, ordered by total degree.
fn monomials(vars: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; vars]];
    for total in 1..=degree {
        let mut level = Vec::new();
        fill(vars, total, &mut vec![0; vars], 0, &mut level);
        out.extend(level);
    }
    out
}

fn fill(vars: usize, remaining: usize, cur: &mut Vec<usize>, at: usize, out: &mut Vec<Vec<usize>>) {
    if at + 1 == vars {
        cur[at] = remaining;
        out.push(cur.clone());
        return;
    }
    for e in (0..=remaining).rev() {
        cur[at] = e;
        fill(vars, remaining - e, cur, at + 1, out);
    }
    cur[at] = 0;
}

/// A factored least-squares projection onto polynomials of one or more
/// regressor samples.
#[derive(Debug, Clone)]
pub struct Regressor {
    centers: Vec<f64>,
    scales: Vec<f64>,
    /// Exponents per active variable of each basis column.
    exponents: Vec<Vec<usize>>,
    /// Indices of the non-degenerate covariates.
    active: Vec<usize>,
    covariates: usize,
    cholesky: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Basis columns at the sample points, `n x p` row-major.
    design: Vec<f64>,
    pub ridge: f64,
}

impl Regressor {
    /// `step` only labels errors.
    pub fn fit(xs: &[f64], basis: &RegressionBasis, step: usize) -> Result<Self> {
        Self::fit_multi(&[xs], basis, step)
    }

    /// Total-degree polynomial regression on several covariates of equal length.
    pub fn fit_multi(covariates: &[&[f64]], basis: &RegressionBasis, step: usize) -> Result<Self> {
        let n = covariates.first().map_or(0, |c| c.len());
        if n == 0 {
            return Err(Error::InvalidInput("regression on an empty sample".into()));
        }
        if covariates.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput(
                "regression covariates differ in length".into(),
            ));
        }
        let mut centers = Vec::new();
        let mut scales = Vec::new();
        let mut active = Vec::new();
        for (j, xs) in covariates.iter().enumerate() {
            let center = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - center).powi(2)).sum::<f64>() / n as f64;
            let scale = var.sqrt();
            // A degenerate cross-section (e.g. the common starting point) carries no
            // information beyond its mean.
            if scale > 1e-12 * center.abs().max(1.0) {
                centers.push(center);
                scales.push(scale);
                active.push(j);
            }
        }
        let degree = if active.is_empty() { 0 } else { basis.degree };
        let mut exponents = monomials(active.len().max(1), degree);
        exponents.truncate(n.max(1));
        if active.is_empty() {
            exponents = vec![vec![0]];
        }
        let p = exponents.len();

        let mut design = Vec::with_capacity(n * p);
        let mut powers = vec![vec![1.0; degree + 1]; active.len()];
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            for (a, &j) in active.iter().enumerate() {
                let z = (covariates[j][i] - centers[a]) / scales[a];
                for e in 1..=degree {
                    powers[a][e] = powers[a][e - 1] * z;
                }
            }
            for ex in &exponents {
                let v = if active.is_empty() {
                    1.0
                } else {
                    ex.iter().enumerate().map(|(a, &e)| powers[a][e]).product()
                };
                design.push(v);
            }
        }
        let mut gram = DMatrix::<f64>::zeros(p, p);
        for row in design.chunks_exact(p) {
            for a in 0..p {
                for b in a..p {
                    gram[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in a..p {
                gram[(a, b)] /= n as f64;
                gram[(b, a)] = gram[(a, b)];
            }
        }

        let mut ridge = basis.ridge;
        for attempt in 0..=MAX_RIDGE_RETRIES {
            let mut g = gram.clone();
            for a in 1..p {
                g[(a, a)] += ridge;
            }
            if let Some(cholesky) = g.cholesky() {
                let diag = cholesky.l_dirty().diagonal();
                let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
                    (lo.min(*d), hi.max(*d))
                });
                if lo > 0.0 && hi / lo < 1e7 {
                    return Ok(Self {
                        centers,
                        scales,
                        exponents,
                        active,
                        covariates: covariates.len(),
                        cholesky,
                        design,
                        ridge,
                    });
                }
            }
            if attempt < MAX_RIDGE_RETRIES {
                ridge = if ridge > 0.0 { ridge * 10.0 } else { 1e-10 };
                log::debug!("step {step}: escalating regression ridge to {ridge:e}");
            }
        }
        Err(Error::SingularRegression { step, ridge })
    }

    /// Highest total degree among the basis columns.
    pub fn degree(&self) -> usize {
        self.exponents
            .iter()
            .map(|e| e.iter().sum::<usize>())
            .max()
            .unwrap_or(0)
    }

    /// Number of basis columns.
    pub fn columns(&self) -> usize {
        self.exponents.len()
    }

    pub fn len(&self) -> usize {
        self.design.len() / self.columns()
    }

    pub fn is_empty(&self) -> bool {
        self.design.is_empty()
    }

    /// Coefficients against the standardized basis columns.
    pub fn coefficients(&self, target: &[f64]) -> Vec<f64> {
        let p = self.columns();
        let n = self.len();
        assert_eq!(
            target.len(),
            n,
            "target length differs from the regressor sample"
        );
        let mut rhs = DVector::<f64>::zeros(p);
        for (row, y) in self.design.chunks_exact(p).zip(target) {
            for a in 0..p {
                rhs[a] += row[a] * y;
            }
        }
        rhs /= n as f64;
        self.cholesky.solve(&rhs).iter().copied().collect()
    }

    /// Fitted values at the sample points.
    pub fn project(&self, target: &[f64]) -> Vec<f64> {
        let beta = self.coefficients(target);
        let p = self.columns();
        self.design
            .chunks_exact(p)
            .map(|row| row.iter().zip(&beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Fitted polynomial of a single covariate as raw monomial coefficients
    /// `c_0 + c_1 x + ...`.
    pub fn raw_coefficients(&self, target: &[f64]) -> Vec<f64> {
        assert_eq!(
            self.covariates, 1,
            "raw coefficients need a single covariate"
        );
        let beta = self.coefficients(target);
        if self.active.is_empty() {
            return beta;
        }
        let (center, scale) = (self.centers[0], self.scales[0]);
        let mut raw = vec![0.0; beta.len()];
        // (x - c)^j / s^j expanded binomially
        for (j, b) in beta.iter().enumerate() {
            let sj = scale.powi(j as i32);
            let mut binom = 1.0;
            #[allow(clippy::needless_range_loop)]
            for m in 0..=j {
                if m > 0 {
                    binom = binom * (j - m + 1) as f64 / m as f64;
                }
                raw[m] += b / sj * binom * (-center).powi((j - m) as i32);
            }
        }
        raw
    }
}
