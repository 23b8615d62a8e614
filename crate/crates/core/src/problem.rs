//! Declarative description of a mean-field control problem.
//!
//! All six coefficients share one argument record, [`Args`], carrying the full
//! arity `(t, x, y, z, m, n, u)`; each coefficient simply ignores what it does
//! not use. Measure arguments are statistic vectors against the problem's
//! [`StatisticBasis`] channels.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measure::StatisticBasis;

/// Evaluation point of a coefficient.
#[derive(Debug, Clone, Copy)]
pub struct Args<'a> {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub u: f64,
    /// Statistics of the law of X.
    pub m: &'a [f64],
    /// Statistics of the law of Y.
    pub n: &'a [f64],
}

impl<'a> Args<'a> {
    pub fn forward(t: f64, x: f64, m: &'a [f64], u: f64) -> Self {
        Self {
            t,
            x,
            y: 0.0,
            z: 0.0,
            u,
            m,
            n: &[],
        }
    }

    pub fn full(t: f64, x: f64, y: f64, z: f64, m: &'a [f64], n: &'a [f64], u: f64) -> Self {
        Self {
            t,
            x,
            y,
            z,
            u,
            m,
            n,
        }
    }

    pub fn terminal(x: f64, m: &'a [f64]) -> Self {
        Self {
            t: 0.0,
            x,
            y: 0.0,
            z: 0.0,
            u: 0.0,
            m,
            n: &[],
        }
    }

    pub fn initial(y: f64, n: &'a [f64]) -> Self {
        Self {
            t: 0.0,
            x: 0.0,
            y,
            z: 0.0,
            u: 0.0,
            m: &[],
            n,
        }
    }
}

impl fmt::Display for Args<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(t={}, x={}, y={}, z={}, u={}, m={:?}, n={:?})",
            self.t, self.x, self.y, self.z, self.u, self.m, self.n
        )
    }
}

/// The six coefficients `(b, sigma, g, f, h, phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coefficient {
    /// Forward drift `b(t, x, m, u)`.
    Drift,
    /// Forward diffusion `sigma(t, x, m, u)`.
    Diffusion,
    /// Backward driver `g(t, x, y, z, m, n, u)`.
    Driver,
    /// Running cost `f(t, x, y, z, m, n, u)`.
    RunningCost,
    /// Terminal cost `h(x, m)`.
    TerminalCost,
    /// Initial cost `phi(y, n)`.
    InitialCost,
}

impl Coefficient {
    pub const ALL: [Coefficient; 6] = [
        Coefficient::Drift,
        Coefficient::Diffusion,
        Coefficient::Driver,
        Coefficient::RunningCost,
        Coefficient::TerminalCost,
        Coefficient::InitialCost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Coefficient::Drift => "b",
            Coefficient::Diffusion => "sigma",
            Coefficient::Driver => "g",
            Coefficient::RunningCost => "f",
            Coefficient::TerminalCost => "h",
            Coefficient::InitialCost => "phi",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Differentiation variable: a scalar argument or one statistic coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Wrt {
    X,
    Y,
    Z,
    U,
    M(usize),
    N(usize),
}

pub type CoefFn = Arc<dyn Fn(&Args) -> f64 + Send + Sync>;

#[derive(Clone)]
struct Entry {
    value: CoefFn,
    partials: Vec<(Wrt, CoefFn)>,
}

impl Entry {
    fn zero() -> Self {
        Self {
            value: Arc::new(|_| 0.0),
            partials: Vec::new(),
        }
    }

    fn partial(&self, wrt: Wrt) -> Option<&CoefFn> {
        self.partials
            .iter()
            .find(|(w, _)| *w == wrt)
            .map(|(_, f)| f)
    }
}

/// Convex control set `[lo, hi]`; infinite endpoints allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSet {
    pub lo: f64,
    pub hi: f64,
}

impl ControlSet {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::InvalidInput(format!(
                "control set needs lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn real_line() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn project(&self, value: f64) -> f64 {
        value.clamp(self.lo, self.hi)
    }

    pub fn is_interior(&self, value: f64) -> bool {
        value > self.lo && value < self.hi
    }
}

/// Information available to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InformationMode {
    /// Full filtration: feedback controls `u(t, x)`.
    Full,
    /// Trivial filtration: deterministic open-loop controls.
    Trivial,
}

/// Whether the cost functional is minimized or maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    /// Factor turning the raw functional into the minimized objective.
    pub fn sign(self) -> f64 {
        match self {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        }
    }
}

type IndexedLaw = Arc<dyn Fn(usize, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Law {
    OpenLoop(Vec<f64>),
    /// Raw monomial coefficients `c_0 + c_1 x + ...` per grid node.
    Polynomial(Vec<Vec<f64>>),
    Feedback(IndexedLaw),
}

/// An admissible control: open-loop grid values or a feedback rule.
#[derive(Clone)]
pub struct ControlProcess {
    mode: InformationMode,
    law: Law,
}

impl fmt::Debug for ControlProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.law {
            Law::OpenLoop(v) => f.debug_tuple("OpenLoop").field(v).finish(),
            Law::Polynomial(c) => f.debug_tuple("Polynomial").field(c).finish(),
            Law::Feedback(_) => f.write_str("Feedback(..)"),
        }
    }
}

impl ControlProcess {
    /// Deterministic control, one value per grid node.
    pub fn open_loop(values: Vec<f64>) -> Self {
        Self {
            mode: InformationMode::Trivial,
            law: Law::OpenLoop(values),
        }
    }

    pub fn constant(value: f64, nodes: usize) -> Self {
        Self::open_loop(vec![value; nodes])
    }

    /// Feedback rule `u(t, x)`.
    pub fn feedback(rule: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            mode: InformationMode::Full,
            law: Law::Feedback(Arc::new(move |_, t, x| rule(t, x))),
        }
    }

    /// Feedback rule polynomial in the state, with raw coefficients per node.
    pub fn polynomial(coefficients: Vec<Vec<f64>>) -> Self {
        Self {
            mode: InformationMode::Full,
            law: Law::Polynomial(coefficients),
        }
    }

    pub fn mode(&self) -> InformationMode {
        self.mode
    }

    pub fn open_loop_values(&self) -> Option<&[f64]> {
        match &self.law {
            Law::OpenLoop(v) => Some(v),
            _ => None,
        }
    }

    pub fn polynomial_coefficients(&self) -> Option<&[Vec<f64>]> {
        match &self.law {
            Law::Polynomial(c) => Some(c),
            _ => None,
        }
    }

    /// Unprojected value at node `k`.
    pub fn raw(&self, k: usize, t: f64, x: f64) -> f64 {
        match &self.law {
            Law::OpenLoop(v) => v[k.min(v.len() - 1)],
            Law::Polynomial(c) => {
                let c = &c[k.min(c.len() - 1)];
                c.iter().rev().fold(0.0, |acc, a| acc * x + a)
            }
            Law::Feedback(rule) => rule(k, t, x),
        }
    }

    /// Projected value at node `k`.
    pub fn value(&self, k: usize, t: f64, x: f64, set: &ControlSet) -> f64 {
        set.project(self.raw(k, t, x))
    }

    /// State sensitivity `d u / d x` of the projected control.
    pub fn dx(&self, k: usize, t: f64, x: f64, set: &ControlSet) -> f64 {
        let raw = self.raw(k, t, x);
        if !set.is_interior(raw) {
            return 0.0;
        }
        match &self.law {
            Law::OpenLoop(_) => 0.0,
            Law::Polynomial(c) => {
                let c = &c[k.min(c.len() - 1)];
                c.iter()
                    .enumerate()
                    .skip(1)
                    .rev()
                    .fold(0.0, |acc, (j, a)| acc * x + j as f64 * a)
            }
            Law::Feedback(rule) => {
                let h = 1e-5 * x.abs().max(1.0);
                (rule(k, t, x + h) - rule(k, t, x - h)) / (2.0 * h)
            }
        }
    }

    /// `self + rho * direction`, kept in closed form when both laws share a representation.
    pub fn perturbed(&self, direction: &ControlProcess, rho: f64) -> ControlProcess {
        let mode = if self.mode == InformationMode::Full || direction.mode == InformationMode::Full
        {
            InformationMode::Full
        } else {
            InformationMode::Trivial
        };
        let law = match (&self.law, &direction.law) {
            (Law::OpenLoop(a), Law::OpenLoop(b)) if a.len() == b.len() => {
                Law::OpenLoop(a.iter().zip(b).map(|(a, b)| a + rho * b).collect())
            }
            (Law::Polynomial(a), Law::Polynomial(b)) if a.len() == b.len() => Law::Polynomial(
                a.iter()
                    .zip(b)
                    .map(|(ca, cb)| {
                        let len = ca.len().max(cb.len());
                        (0..len)
                            .map(|j| {
                                ca.get(j).copied().unwrap_or(0.0)
                                    + rho * cb.get(j).copied().unwrap_or(0.0)
                            })
                            .collect()
                    })
                    .collect(),
            ),
            _ => {
                let (a, b) = (self.clone(), direction.clone());
                Law::Feedback(Arc::new(move |k, t, x| {
                    a.raw(k, t, x) + rho * b.raw(k, t, x)
                }))
            }
        };
        ControlProcess { mode, law }
    }
}

/// A mean-field control problem: coefficients, derivative suppliers and setting.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    entries: [Entry; 6],
    pub basis_m: StatisticBasis,
    pub basis_n: StatisticBasis,
    pub x0: f64,
    pub horizon: f64,
    pub control_set: ControlSet,
    pub info: InformationMode,
    pub sense: Sense,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .field("control_set", &self.control_set)
            .field("info", &self.info)
            .field("sense", &self.sense)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// Problem with every coefficient identically zero.
    pub fn builder(name: impl Into<String>, x0: f64, horizon: f64) -> ProblemBuilder {
        ProblemBuilder {
            spec: ProblemSpec {
                name: name.into(),
                entries: std::array::from_fn(|_| Entry::zero()),
                basis_m: StatisticBasis::empty(),
                basis_n: StatisticBasis::empty(),
                x0,
                horizon,
                control_set: ControlSet::real_line(),
                info: InformationMode::Trivial,
                sense: Sense::Minimize,
            },
        }
    }

    /// Unchecked evaluation, for inner loops that validate results in bulk.
    #[inline]
    pub fn eval(&self, which: Coefficient, args: &Args) -> f64 {
        (self.entries[which.index()].value)(args)
    }

    pub fn eval_coefficient(&self, which: Coefficient, args: &Args) -> Result<f64> {
        let v = self.eval(which, args);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteCoefficient {
                coefficient: which.name(),
                arguments: args.to_string(),
            })
        }
    }

    pub fn has_analytic_partial(&self, which: Coefficient, wrt: Wrt) -> bool {
        self.entries[which.index()].partial(wrt).is_some()
    }

    /// Partial derivative: the registered supplier if any, else a central difference.
    #[inline]
    pub fn partial(&self, which: Coefficient, wrt: Wrt, args: &Args) -> f64 {
        match self.entries[which.index()].partial(wrt) {
            Some(d) => d(args),
            None => self.finite_difference(which, wrt, args),
        }
    }

    pub fn eval_derivative(&self, which: Coefficient, wrt: Wrt, args: &Args) -> Result<f64> {
        let v = self.partial(which, wrt, args);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteCoefficient {
                coefficient: which.name(),
                arguments: format!("d/d{wrt:?} at {args}"),
            })
        }
    }

    /// Central difference with step `1e-5 * max(1, |arg|)`.
    pub fn finite_difference(&self, which: Coefficient, wrt: Wrt, args: &Args) -> f64 {
        let f = &self.entries[which.index()].value;
        let step = |v: f64| 1e-5 * v.abs().max(1.0);
        match wrt {
            Wrt::X | Wrt::Y | Wrt::Z | Wrt::U => {
                let base = match wrt {
                    Wrt::X => args.x,
                    Wrt::Y => args.y,
                    Wrt::Z => args.z,
                    _ => args.u,
                };
                let h = step(base);
                let shifted = |v: f64| {
                    let mut a = *args;
                    match wrt {
                        Wrt::X => a.x = v,
                        Wrt::Y => a.y = v,
                        Wrt::Z => a.z = v,
                        _ => a.u = v,
                    }
                    f(&a)
                };
                (shifted(base + h) - shifted(base - h)) / (2.0 * h)
            }
            Wrt::M(j) | Wrt::N(j) => {
                let stats = if matches!(wrt, Wrt::M(_)) {
                    args.m
                } else {
                    args.n
                };
                if j >= stats.len() {
                    return 0.0;
                }
                let h = step(stats[j]);
                let mut bumped = stats.to_vec();
                let mut eval = |v: f64| {
                    bumped[j] = v;
                    let mut a = *args;
                    if matches!(wrt, Wrt::M(_)) {
                        a.m = &bumped;
                    } else {
                        a.n = &bumped;
                    }
                    f(&a)
                };
                let up = eval(stats[j] + h);
                let down = eval(stats[j] - h);
                (up - down) / (2.0 * h)
            }
        }
    }

    pub fn project_control(&self, value: f64) -> f64 {
        self.control_set.project(value)
    }

    /// Registered analytic partials, for consistency probing.
    pub fn registered_partials(&self) -> Vec<(Coefficient, Wrt)> {
        Coefficient::ALL
            .iter()
            .flat_map(|&c| {
                self.entries[c.index()]
                    .partials
                    .iter()
                    .map(move |(w, _)| (c, *w))
            })
            .collect()
    }

    /// Largest observed ratio `|b(x, m) - b(x', m')| / (|x - x'| + |m - m'|)` over
    /// random probes in `[-range, range]`, for a forward coefficient at fixed `(t, u)`.
    pub fn lipschitz_estimate(
        &self,
        which: Coefficient,
        t: f64,
        u: f64,
        range: f64,
        probes: usize,
        seed: u64,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.basis_m.len();
        let mut worst: f64 = 0.0;
        for _ in 0..probes {
            let x1 = rng.random_range(-range..range);
            let x2 = rng.random_range(-range..range);
            let m1: Vec<f64> = (0..dim).map(|_| rng.random_range(-range..range)).collect();
            let m2: Vec<f64> = (0..dim).map(|_| rng.random_range(-range..range)).collect();
            let a1 = Args::forward(t, x1, &m1, u);
            let a2 = Args::forward(t, x2, &m2, u);
            let gap = (x1 - x2).abs()
                + m1.iter()
                    .zip(&m2)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
            if gap > 1e-9 {
                worst = worst.max((self.eval(which, &a1) - self.eval(which, &a2)).abs() / gap);
            }
        }
        worst
    }
}

/// Assembles a [`ProblemSpec`]; unset coefficients are zero.
pub struct ProblemBuilder {
    spec: ProblemSpec,
}

impl ProblemBuilder {
    pub fn coefficient(
        mut self,
        which: Coefficient,
        value: impl Fn(&Args) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.spec.entries[which.index()].value = Arc::new(value);
        self
    }

    pub fn partial(
        mut self,
        which: Coefficient,
        wrt: Wrt,
        d: impl Fn(&Args) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let entry = &mut self.spec.entries[which.index()];
        entry.partials.retain(|(w, _)| *w != wrt);
        entry.partials.push((wrt, Arc::new(d)));
        self
    }

    /// Registers `d which / d wrt = 0` for every listed variable.
    pub fn independent_of(mut self, which: Coefficient, wrts: &[Wrt]) -> Self {
        for &w in wrts {
            self = self.partial(which, w, |_| 0.0);
        }
        self
    }

    pub fn basis_m(mut self, basis: StatisticBasis) -> Self {
        self.spec.basis_m = basis;
        self
    }

    pub fn basis_n(mut self, basis: StatisticBasis) -> Self {
        self.spec.basis_n = basis;
        self
    }

    pub fn control_set(mut self, set: ControlSet) -> Self {
        self.spec.control_set = set;
        self
    }

    pub fn info(mut self, info: InformationMode) -> Self {
        self.spec.info = info;
        self
    }

    pub fn sense(mut self, sense: Sense) -> Self {
        self.spec.sense = sense;
        self
    }

    pub fn build(self) -> Result<ProblemSpec> {
        let s = &self.spec;
        if !(s.horizon.is_finite() && s.horizon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "horizon must be positive, got {}",
                s.horizon
            )));
        }
        if !s.x0.is_finite() {
            return Err(Error::InvalidInput("x0 must be finite".into()));
        }
        Ok(self.spec)
    }
}
