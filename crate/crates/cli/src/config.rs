//! Line-based `key = value` run configuration.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Line {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SimulateForward,
    SolveBsde,
    Optimize,
    Risk,
    BenchmarkPortfolio,
    PropertySuite,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::SimulateForward,
        Command::SolveBsde,
        Command::Optimize,
        Command::Risk,
        Command::BenchmarkPortfolio,
        Command::PropertySuite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateForward => "simulate-forward",
            Command::SolveBsde => "solve-bsde",
            Command::Optimize => "optimize",
            Command::Risk => "risk",
            Command::BenchmarkPortfolio => "benchmark-portfolio",
            Command::PropertySuite => "property-suite",
        }
    }

    fn default_problem(self) -> Preset {
        match self {
            Command::Optimize => Preset::Lq,
            Command::BenchmarkPortfolio => Preset::Portfolio,
            _ => Preset::Gbm,
        }
    }
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command `{s}`"))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Gbm,
    MeanReverting,
    Lq,
    Portfolio,
    PortfolioProportion,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Gbm,
        Preset::MeanReverting,
        Preset::Lq,
        Preset::Portfolio,
        Preset::PortfolioProportion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Gbm => "gbm",
            Preset::MeanReverting => "mean_reverting",
            Preset::Lq => "lq",
            Preset::Portfolio => "portfolio",
            Preset::PortfolioProportion => "portfolio_proportion",
        }
    }
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown problem `{s}`"))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Info {
    Trivial,
    Full,
}

impl FromStr for Info {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trivial" => Ok(Info::Trivial),
            "full" => Ok(Info::Full),
            _ => Err(format!("unknown information mode `{s}` (trivial or full)")),
        }
    }
}

impl fmt::Display for Info {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Info::Trivial => "trivial",
            Info::Full => "full",
        })
    }
}

/// Resolved run configuration. Field comments give the config key and default.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `command`, required.
    pub command: Command,
    /// `problem`; `lq` for optimize, `portfolio` for benchmark-portfolio, `gbm` otherwise.
    pub problem: Preset,
    /// `N = 10000`.
    pub particles: usize,
    /// `K = 100`.
    pub steps: usize,
    /// `T = 1`.
    pub horizon: f64,
    /// `seed = 42`.
    pub seed: u64,
    /// `basis_degree = 3`.
    pub basis_degree: usize,
    /// `ridge = 1e-8`.
    pub ridge: f64,
    /// `control_variate`: on for optimize and benchmark-portfolio, off otherwise.
    pub control_variate: bool,
    /// `step0 = 0.1`; benchmark-portfolio uses `1 / sigma0^2` when unset.
    pub step0: Option<f64>,
    /// `max_iters = 200`.
    pub max_iters: usize,
    /// `tol = 1e-3`.
    pub tol: f64,
    /// `max_halvings = 20`.
    pub max_halvings: usize,
    /// `info = trivial`.
    pub info: Info,
    /// `x0 = 1`.
    pub x0: f64,
    /// `b = 0.1`, GBM drift.
    pub b: f64,
    /// `sigma = 0.2`, state volatility of gbm, mean_reverting and lq.
    pub sigma: f64,
    /// `kappa = 1`.
    pub kappa: f64,
    /// `r = 0`, rate on `Y` in the backward driver.
    pub r: f64,
    /// `r_prime = 0`, rate on `E[Y]`.
    pub r_prime: f64,
    /// `b0 = 0.04`.
    pub b0: f64,
    /// `sigma0 = 0.2`.
    pub sigma0: f64,
    /// `r0 = 0.05`.
    pub r0: f64,
    /// `initial_control = 0`.
    pub initial_control: f64,
    /// `risk_driver = entropic` (`F(z) = -z^2/2`) or `zero`.
    pub risk_driver: RiskDriverKind,
    /// `entropy_particles = 100000`.
    pub entropy_particles: usize,
    /// `output_dir = output`.
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskDriverKind {
    Entropic,
    Zero,
}

impl FromStr for RiskDriverKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "entropic" => Ok(RiskDriverKind::Entropic),
            "zero" => Ok(RiskDriverKind::Zero),
            _ => Err(format!("unknown risk driver `{s}` (entropic or zero)")),
        }
    }
}

impl fmt::Display for RiskDriverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskDriverKind::Entropic => "entropic",
            RiskDriverKind::Zero => "zero",
        })
    }
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            problem: command.default_problem(),
            particles: 10_000,
            steps: 100,
            horizon: 1.0,
            seed: 42,
            basis_degree: 3,
            ridge: 1e-8,
            control_variate: matches!(command, Command::Optimize | Command::BenchmarkPortfolio),
            step0: None,
            max_iters: 200,
            tol: 1e-3,
            max_halvings: 20,
            info: Info::Trivial,
            x0: 1.0,
            b: 0.1,
            sigma: 0.2,
            kappa: 1.0,
            r: 0.0,
            r_prime: 0.0,
            b0: 0.04,
            sigma0: 0.2,
            r0: 0.05,
            initial_control: 0.0,
            risk_driver: RiskDriverKind::Entropic,
            entropy_particles: 100_000,
            output_dir: PathBuf::from("output"),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.particles < 2 {
            return fail("N must be at least 2");
        }
        if self.steps < 1 {
            return fail("K must be at least 1");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return fail("T must be positive");
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return fail("ridge must be non-negative");
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return fail("tol must be positive");
        }
        if let Some(s) = self.step0 {
            if !(s > 0.0 && s.is_finite()) {
                return fail("step0 must be positive");
            }
        }
        if self.entropy_particles < 2 {
            return fail("entropy_particles must be at least 2");
        }
        Ok(())
    }

    /// The resolved configuration in the input format.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        put("command", self.command.to_string());
        put("problem", self.problem.to_string());
        put("N", self.particles.to_string());
        put("K", self.steps.to_string());
        put("T", self.horizon.to_string());
        put("seed", self.seed.to_string());
        put("basis_degree", self.basis_degree.to_string());
        put("ridge", self.ridge.to_string());
        put("control_variate", self.control_variate.to_string());
        if let Some(s) = self.step0 {
            put("step0", s.to_string());
        }
        put("max_iters", self.max_iters.to_string());
        put("tol", self.tol.to_string());
        put("max_halvings", self.max_halvings.to_string());
        put("info", self.info.to_string());
        put("x0", self.x0.to_string());
        put("b", self.b.to_string());
        put("sigma", self.sigma.to_string());
        put("kappa", self.kappa.to_string());
        put("r", self.r.to_string());
        put("r_prime", self.r_prime.to_string());
        put("b0", self.b0.to_string());
        put("sigma0", self.sigma0.to_string());
        put("r0", self.r0.to_string());
        put("initial_control", self.initial_control.to_string());
        put("risk_driver", self.risk_driver.to_string());
        put("entropy_particles", self.entropy_particles.to_string());
        put("output_dir", self.output_dir.display().to_string());
        out
    }
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| at(line, format!("malformed value `{value}` for `{key}`: {e}")))
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| at(line, format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(at(line, "empty key or value"));
        }
        if !seen.insert(key.to_string()) {
            return Err(at(line, format!("duplicate key `{key}`")));
        }
        entries.push((line, key.to_string(), value.to_string()));
    }

    let command = match entries.iter().find(|(_, k, _)| k == "command") {
        Some((line, k, v)) => parse::<Command>(*line, k, v)?,
        None => {
            return Err(ConfigError::Invalid(
                "missing required key `command`".into(),
            ))
        }
    };
    let mut cfg = RunConfig::new(command);

    for (line, key, value) in &entries {
        let (line, v) = (*line, value.as_str());
        let k = key.as_str();
        let positive = |x: f64, what: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(x)
            } else {
                Err(at(line, format!("{what} must be positive, got {x}")))
            }
        };
        match k {
            "command" => {}
            "problem" => cfg.problem = parse(line, k, v)?,
            "N" => {
                cfg.particles = parse(line, k, v)?;
                if cfg.particles < 2 {
                    return Err(at(line, "N must be at least 2"));
                }
            }
            "K" => {
                cfg.steps = parse(line, k, v)?;
                if cfg.steps < 1 {
                    return Err(at(line, "K must be at least 1"));
                }
            }
            "T" => cfg.horizon = positive(parse(line, k, v)?, "T")?,
            "seed" => cfg.seed = parse(line, k, v)?,
            "basis_degree" => cfg.basis_degree = parse(line, k, v)?,
            "ridge" => {
                cfg.ridge = parse(line, k, v)?;
                if !(cfg.ridge.is_finite() && cfg.ridge >= 0.0) {
                    return Err(at(line, "ridge must be non-negative"));
                }
            }
            "control_variate" => cfg.control_variate = parse(line, k, v)?,
            "step0" => cfg.step0 = Some(positive(parse(line, k, v)?, "step0")?),
            "max_iters" => cfg.max_iters = parse(line, k, v)?,
            "tol" => cfg.tol = positive(parse(line, k, v)?, "tol")?,
            "max_halvings" => cfg.max_halvings = parse(line, k, v)?,
            "info" => cfg.info = parse(line, k, v)?,
            "x0" => cfg.x0 = parse(line, k, v)?,
            "b" => cfg.b = parse(line, k, v)?,
            "sigma" => cfg.sigma = parse(line, k, v)?,
            "kappa" => cfg.kappa = parse(line, k, v)?,
            "r" => cfg.r = parse(line, k, v)?,
            "r_prime" => cfg.r_prime = parse(line, k, v)?,
            "b0" => cfg.b0 = parse(line, k, v)?,
            "sigma0" => cfg.sigma0 = parse(line, k, v)?,
            "r0" => cfg.r0 = parse(line, k, v)?,
            "initial_control" => cfg.initial_control = parse(line, k, v)?,
            "risk_driver" => cfg.risk_driver = parse(line, k, v)?,
            "entropy_particles" => cfg.entropy_particles = parse(line, k, v)?,
            "output_dir" => cfg.output_dir = PathBuf::from(v),
            _ => return Err(at(line, format!("unknown key `{k}`"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
