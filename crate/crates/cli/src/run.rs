//! Subcommand orchestration and deterministic artifact emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mfsmp::backward::{martingale_residual, ProblemDriver};
use mfsmp::forward::measure_flow_lipschitz_report;
use mfsmp::portfolio::{benchmark, BenchmarkSettings};
use mfsmp::presets;
use mfsmp::risk::{discounted_risk, monotonicity_check, translation_invariance_check};
use mfsmp::{
    optimize, simulate_forward, solve_backward, ControlProcess, InformationMode, OptimizerSettings,
    PortfolioParams, ProblemSpec, RegressionBasis, RiskDriverSpec, TimeGrid, ZScaling,
};

use crate::config::{Command, Info, Preset, RiskDriverKind, RunConfig};
use crate::properties::property_suite;

/// Files written by a run and the text echoed to stdout.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub stdout: String,
}

/// Key scalars written to `summary.txt`.
#[derive(Debug, Default, Clone)]
pub struct Summary {
    lines: Vec<(String, String)>,
}

impl Summary {
    pub fn real(&mut self, key: &str, value: f64) {
        self.lines.push((key.into(), format_real(value)));
    }

    pub fn int(&mut self, key: &str, value: usize) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn flag(&mut self, key: &str, value: bool) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn text(&mut self, key: &str, value: &str) {
        self.lines.push((key.into(), value.into()));
    }

    pub fn render(&self) -> String {
        self.lines
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// 12 significant digits in scientific notation.
pub fn format_real(v: f64) -> String {
    format!("{v:.11e}")
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let text: Vec<Vec<String>> = rows
        .iter()
        .map(|r| r.iter().map(|v| format_real(*v)).collect())
        .collect();
    write_text_csv(path, header, &text)
}

pub fn write_text_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn info_mode(cfg: &RunConfig) -> InformationMode {
    match cfg.info {
        Info::Trivial => InformationMode::Trivial,
        Info::Full => InformationMode::Full,
    }
}

fn portfolio_params(cfg: &RunConfig) -> Result<PortfolioParams> {
    Ok(PortfolioParams::constant(
        cfg.b0,
        cfg.sigma0,
        cfg.r0,
        cfg.x0,
        cfg.horizon,
    )?)
}

pub fn build_spec(cfg: &RunConfig) -> Result<ProblemSpec> {
    let spec = match cfg.problem {
        Preset::Gbm => presets::gbm(cfg.b, cfg.sigma, cfg.x0, cfg.horizon, cfg.r, cfg.r_prime)?,
        Preset::MeanReverting => {
            presets::mean_reverting(cfg.kappa, cfg.sigma, cfg.x0, cfg.horizon)?
        }
        Preset::Lq => presets::lq(cfg.x0, cfg.sigma, cfg.horizon, info_mode(cfg))?,
        Preset::Portfolio => presets::portfolio(&portfolio_params(cfg)?)?,
        Preset::PortfolioProportion => presets::portfolio_proportion(&portfolio_params(cfg)?)?,
    };
    Ok(spec)
}

pub fn basis(cfg: &RunConfig) -> Result<RegressionBasis> {
    Ok(
        RegressionBasis::new(cfg.basis_degree, cfg.ridge)?
            .with_control_variate(cfg.control_variate),
    )
}

fn grid(cfg: &RunConfig) -> Result<TimeGrid> {
    Ok(TimeGrid::new(cfg.horizon, cfg.steps)?)
}

fn optimizer_settings(cfg: &RunConfig) -> OptimizerSettings {
    let portfolio = matches!(cfg.problem, Preset::Portfolio | Preset::PortfolioProportion);
    let fallback = if portfolio {
        1.0 / (cfg.sigma0 * cfg.sigma0)
    } else {
        0.1
    };
    OptimizerSettings {
        step0: cfg.step0.unwrap_or(fallback),
        max_iters: cfg.max_iters,
        tol: cfg.tol,
        max_halvings: cfg.max_halvings,
    }
}

fn mean_std(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Runs the configured subcommand and writes its artifacts under `cfg.output_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    let mut summary = Summary::default();
    summary.text("command", cfg.command.name());
    let mut stdout = String::new();

    match cfg.command {
        Command::SimulateForward => simulate(cfg, dir, &mut files, &mut summary)?,
        Command::SolveBsde => solve_bsde(cfg, dir, &mut files, &mut summary)?,
        Command::Optimize => run_optimize(cfg, dir, &mut files, &mut summary)?,
        Command::Risk => run_risk(cfg, dir, &mut files, &mut summary)?,
        Command::BenchmarkPortfolio => run_benchmark(cfg, dir, &mut files, &mut summary)?,
        Command::PropertySuite => {
            let table = property_suite(cfg)?;
            let path = dir.join("properties.csv");
            let rows: Vec<Vec<String>> = table
                .iter()
                .map(|p| {
                    vec![
                        p.name.clone(),
                        format_real(p.value),
                        format_real(p.threshold),
                        p.status().into(),
                    ]
                })
                .collect();
            write_text_csv(&path, &["property", "value", "threshold", "status"], &rows)?;
            files.push(path);
            for p in &table {
                let _ = writeln!(
                    stdout,
                    "{:<4} {:<44} {:>19} (threshold {})",
                    p.status(),
                    p.name,
                    format_real(p.value),
                    format_real(p.threshold)
                );
            }
            summary.int("properties", table.len());
            summary.int("failed", table.iter().filter(|p| !p.passed).count());
        }
    }

    let path = dir.join("summary.txt");
    let text = summary.render();
    fs::write(&path, &text)?;
    files.push(path);
    let path = dir.join("config.txt");
    fs::write(&path, cfg.render())?;
    files.push(path);
    stdout.push_str(&text);
    Ok(RunOutput { files, stdout })
}

fn simulate(
    cfg: &RunConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
    summary: &mut Summary,
) -> Result<()> {
    let spec = build_spec(cfg)?;
    let grid = grid(cfg)?;
    let u = ControlProcess::constant(cfg.initial_control, grid.nodes());
    let ens = simulate_forward(&spec, &u, &grid, cfg.particles, cfg.seed)
        .context("forward simulation")?;
    let n = cfg.particles as f64;
    let rows: Vec<Vec<f64>> = (0..grid.nodes())
        .map(|k| {
            let (m, s) = mean_std(ens.states.row(k));
            vec![grid.t(k), m, s, s / n.sqrt()]
        })
        .collect();
    let path = dir.join("forward.csv");
    write_csv(&path, &["t", "mean_X", "std_X", "stderr"], &rows)?;
    files.push(path);

    let last = &rows[grid.steps()];
    summary.text("problem", cfg.problem.name());
    summary.real("mean_X_T", last[1]);
    summary.real("stderr_X_T", last[3]);
    match cfg.problem {
        Preset::Gbm => summary.real("oracle_mean_X_T", cfg.x0 * (cfg.b * cfg.horizon).exp()),
        Preset::MeanReverting => summary.real("oracle_mean_X_T", cfg.x0),
        _ => {}
    }
    let lip = measure_flow_lipschitz_report(&ens);
    summary.real("measure_flow_max_ratio", lip.max_ratio);
    summary.int("measure_flow_bound_violations", lip.bound_violations);
    Ok(())
}

fn solve_bsde(
    cfg: &RunConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
    summary: &mut Summary,
) -> Result<()> {
    let spec = build_spec(cfg)?;
    let grid = grid(cfg)?;
    let basis = basis(cfg)?;
    let u = ControlProcess::constant(cfg.initial_control, grid.nodes());
    let ens = simulate_forward(&spec, &u, &grid, cfg.particles, cfg.seed)
        .context("forward simulation")?;
    let sol = solve_backward(&spec, &ens, &basis).context("backward solve")?;
    let n = cfg.particles as f64;
    let rows: Vec<Vec<f64>> = (0..grid.nodes())
        .map(|k| {
            let (m, s) = mean_std(sol.y.row(k));
            vec![grid.t(k), m, sol.z.row_mean(k), s / n.sqrt()]
        })
        .collect();
    let path = dir.join("bsde.csv");
    write_csv(&path, &["t", "mean_Y", "mean_Z", "stderr"], &rows)?;
    files.push(path);

    let mart = martingale_residual(
        &sol,
        &ens,
        &ProblemDriver {
            spec: &spec,
            ensemble: &ens,
        },
    );
    summary.text("problem", cfg.problem.name());
    summary.real("Y0", sol.y0_mean());
    summary.int("picard_iterations", sol.picard_iterations);
    summary.real("picard_residual", sol.picard_residual);
    summary.real("martingale_residual", mart.residual);
    summary.real("martingale_stderr", mart.stderr);
    Ok(())
}

fn run_optimize(
    cfg: &RunConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
    summary: &mut Summary,
) -> Result<()> {
    let spec = build_spec(cfg)?;
    let grid = grid(cfg)?;
    let basis = basis(cfg)?;
    let u0 = ControlProcess::constant(cfg.initial_control, grid.nodes());
    let settings = optimizer_settings(cfg);
    let report = optimize(
        &spec,
        &u0,
        &grid,
        cfg.particles,
        cfg.seed,
        &basis,
        &settings,
    )
    .context("optimization")?;

    let rows: Vec<Vec<f64>> = report
        .j_history
        .iter()
        .zip(&report.grad_history)
        .enumerate()
        .map(|(i, (j, g))| vec![i as f64, *j, *g])
        .collect();
    let path = dir.join("optimize.csv");
    write_csv(&path, &["iteration", "J", "grad_norm"], &rows)?;
    files.push(path);

    let state = mfsmp::solve_state(
        &spec,
        &report.control,
        &grid,
        cfg.particles,
        cfg.seed,
        &basis,
    )?;
    let norms = report.gradient.node_norms();
    let rows: Vec<Vec<f64>> = (0..grid.nodes())
        .map(|k| {
            let u = state.ensemble.controls.row_mean(k);
            vec![grid.t(k), u, norms.get(k).copied().unwrap_or(0.0)]
        })
        .collect();
    let path = dir.join("control.csv");
    write_csv(&path, &["t", "u_mean", "gradient"], &rows)?;
    files.push(path);

    summary.text("problem", cfg.problem.name());
    summary.real("J", report.objective.value);
    summary.real("J_stderr", report.objective.stderr);
    summary.int("iterations", report.iterations);
    summary.flag("converged", report.converged);
    summary.flag("stalled", report.stalled);
    summary.real("stationarity_residual", report.stationarity_residual);
    summary.real("step0", settings.step0);
    if cfg.problem == Preset::Lq {
        summary.real("oracle_u", -cfg.x0 / (1.0 + cfg.horizon));
        summary.real(
            "oracle_J",
            cfg.x0 * cfg.x0 / (1.0 + cfg.horizon) + cfg.sigma * cfg.sigma * cfg.horizon,
        );
    }
    Ok(())
}

pub fn risk_driver(cfg: &RunConfig) -> RiskDriverSpec {
    match cfg.risk_driver {
        RiskDriverKind::Entropic => RiskDriverSpec::entropic(cfg.r, cfg.r_prime),
        RiskDriverKind::Zero => RiskDriverSpec::constant_rates(cfg.r, cfg.r_prime, |_, _| 0.0),
    }
}

fn run_risk(
    cfg: &RunConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
    summary: &mut Summary,
) -> Result<()> {
    let spec = build_spec(cfg)?;
    let grid = grid(cfg)?;
    let basis = basis(cfg)?;
    let u = ControlProcess::constant(cfg.initial_control, grid.nodes());
    let ens = simulate_forward(&spec, &u, &grid, cfg.particles, cfg.seed)
        .context("forward simulation")?;
    let xi = ens.states.row(grid.steps()).to_vec();
    let driver = risk_driver(cfg);
    let quote = mfsmp::risk(&driver, &xi, &ens, &basis).context("risk solve")?;
    let rows: Vec<Vec<f64>> = (0..grid.nodes())
        .map(|k| {
            vec![
                grid.t(k),
                quote.mean_y[k],
                quote.phi_path[k],
                quote.stderr[k],
            ]
        })
        .collect();
    let path = dir.join("risk.csv");
    write_csv(&path, &["t", "mean_Y", "phi", "stderr"], &rows)?;
    files.push(path);

    summary.text("problem", cfg.problem.name());
    summary.text("risk_driver", &cfg.risk_driver.to_string());
    summary.real("phi0", quote.phi0);
    summary.real("phi0_stderr", quote.mc_stderr);
    for a in [-2.0, -1.0, 0.0, 1.0, 2.0] {
        let res = translation_invariance_check(&driver, &xi, a, &ens, &basis)?;
        summary.real(&format!("translation_residual[a={a}]"), res);
    }
    let upper: Vec<f64> = xi.iter().map(|x| x + 0.1 * (1.0 + x.abs())).collect();
    let mono = monotonicity_check(&driver, &xi, &upper, &ens, &basis)?;
    summary.real("monotonicity_difference", mono.difference);
    summary.real("monotonicity_stderr", mono.stderr);
    summary.flag("monotonicity_holds", mono.holds(3.0));
    let disc = discounted_risk(&driver, &xi, &ens, &basis, ZScaling::Forward)?;
    summary.real("phi0_discounted_forward_scaling", disc.phi0);
    let disc = discounted_risk(&driver, &xi, &ens, &basis, ZScaling::Inverse)?;
    summary.real("phi0_discounted_inverse_scaling", disc.phi0);
    Ok(())
}

fn run_benchmark(
    cfg: &RunConfig,
    dir: &Path,
    files: &mut Vec<PathBuf>,
    summary: &mut Summary,
) -> Result<()> {
    let params = portfolio_params(cfg)?;
    let grid = grid(cfg)?;
    let mut settings = BenchmarkSettings::new(&params, &grid, cfg.particles, cfg.seed);
    settings.basis = basis(cfg)?;
    settings.optimizer = OptimizerSettings {
        step0: cfg.step0.unwrap_or(settings.optimizer.step0),
        max_iters: cfg.max_iters,
        tol: cfg.tol,
        max_halvings: cfg.max_halvings,
    };
    settings.initial_amount = cfg.initial_control;
    settings.entropy_particles = cfg.entropy_particles;
    let r = benchmark(&params, &grid, &settings).context("portfolio benchmark")?;

    let rows: Vec<Vec<f64>> = (0..r.t.len())
        .map(|k| {
            vec![
                r.t[k],
                r.z_recovered[k],
                r.z_closed_form[k],
                r.grad_residual[k],
                r.p0_mean[k],
                r.lambda0_mean[k],
                r.z_optimal[k],
                r.amount[k],
            ]
        })
        .collect();
    let path = dir.join("benchmark.csv");
    write_csv(
        &path,
        &[
            "t",
            "Z_recovered",
            "Z_closed_form",
            "grad_residual",
            "p0_mean",
            "lambda0_mean",
            "Z_discounted",
            "amount",
        ],
        &rows,
    )?;
    files.push(path);

    summary.real("minimal_risk", r.minimal_risk.value);
    summary.real("minimal_risk_stderr", r.minimal_risk.stderr);
    summary.real("minimal_risk_oracle", r.minimal_risk_oracle);
    summary.real("minimal_risk_alternative_formula", r.minimal_risk_alternative);
    summary.real("entropy_analytic", r.entropy_analytic);
    summary.real("entropy_mc", r.entropy_mc.value);
    summary.real("entropy_mc_stderr", r.entropy_mc.stderr);
    summary.real("z_error_vs_closed_form", r.z_error_closed_form);
    summary.real("z_error_vs_discounted_optimum", r.z_error_optimal);
    summary.real("stationarity_residual", r.stationarity_residual);
    summary.real("p0_lambda0_discrepancy", r.p0_lambda0_discrepancy);
    summary.int("iterations", r.iterations);
    summary.flag("converged", r.converged);
    summary.flag("stalled", r.stalled);
    Ok(())
}
