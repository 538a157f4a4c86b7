//! Command-line entry point: config parsing, experiment dispatch, report
//! emission.
//!
//! Subcommands: `spectrum | verify-upper | verify-lower | sweep | isserlis |
//! finite-sets`. Every command reads one strict JSON config, honors the
//! uniform `--seed/--reps/--out/--threads/--format` overrides, writes a CSV
//! table plus a JSON summary embedding the resolved config, and exits 0 only
//! when no cell failed and every configured threshold passed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;
use thiserror::Error;

use crate::bounds;
use crate::config::{
    self, parse_family, parse_norm_method, ConfigError, FiniteSetsConfig, IsserlisConfig,
    SpectrumCommandConfig, SweepCommandConfig, VerifyLowerConfig, VerifyUpperConfig,
};
use crate::experiments::{self, ExperimentError};
use crate::joint::{self, CouplingSpec};
use crate::matops::mix_seed;
use crate::report::{fmt_bool, fmt_float, fmt_usize, CsvTable};
use crate::samplers::{sample_joint_gaussian, stream_rng, StreamRole};
use crate::spectra::{build_covariance, Rotation, SpectrumFamily, SpectrumSpec};

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "CROSSCOV_LAB_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Experiment(#[from] ExperimentError),
    #[error("{0}")]
    Joint(#[from] crate::joint::JointModelError),
    #[error("{0}")]
    Bounds(#[from] crate::bounds::BoundsError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Parser)]
#[command(name = "crosscov-lab", version, about = "Cross-covariance deviation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutputFormat {
    /// Print the CSV table to stdout.
    Csv,
    /// Print the JSON summary to stdout.
    Json,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for the CSV table and JSON summary.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the config's replicate count.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Worker threads (fallback: CROSSCOV_LAB_THREADS, then all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate eigenvalue profiles: trace, operator norm, effective rank.
    Spectrum(CommonArgs),
    /// Tail quantiles against the high-probability rate shape.
    VerifyUpper(CommonArgs),
    /// Regression-split decomposition and no-cancellation margins.
    VerifyLower(CommonArgs),
    /// Deviation sweeps with scaling fits and ratio analyses.
    Sweep(CommonArgs),
    /// Product-variance identity spot checks against Monte Carlo.
    Isserlis(CommonArgs),
    /// Brute-force bilinear deviation over finite index sets.
    FiniteSets(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Spectrum(a)
            | Command::VerifyUpper(a)
            | Command::VerifyLower(a)
            | Command::Sweep(a)
            | Command::Isserlis(a)
            | Command::FiniteSets(a) => a,
        }
    }
}

fn resolve_threads(args: &CommonArgs) -> Option<usize> {
    args.threads.or_else(|| {
        std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok())
    })
}

/// Run a parsed CLI invocation. Exit code 0: success, 1: threshold or cell
/// failure, 2: usage/config/runtime error.
pub fn run(cli: Cli) -> ExitCode {
    let args = cli.command.common();
    let pool = {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(threads) = resolve_threads(args) {
            builder = builder.num_threads(threads);
        }
        builder.build()
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let outcome = pool.install(|| dispatch(&cli.command));
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: &Command) -> Result<bool, CliError> {
    match command {
        Command::Spectrum(args) => cmd_spectrum(args),
        Command::VerifyUpper(args) => cmd_verify_upper(args),
        Command::VerifyLower(args) => cmd_verify_lower(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Isserlis(args) => cmd_isserlis(args),
        Command::FiniteSets(args) => cmd_finite_sets(args),
    }
}

fn read_config_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn sanitize_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

struct Emitter<'a> {
    args: &'a CommonArgs,
    label: String,
    started: Instant,
}

impl<'a> Emitter<'a> {
    fn new(args: &'a CommonArgs, label: Option<&str>, default_label: &str) -> Self {
        Self {
            args,
            label: sanitize_label(label.unwrap_or(default_label)),
            started: Instant::now(),
        }
    }

    /// Write the CSV table and the summary JSON; print per `--format`.
    fn emit(
        &self,
        table: &CsvTable,
        config_json: serde_json::Value,
        mut summary: serde_json::Value,
        ok: bool,
    ) -> Result<bool, CliError> {
        let csv_path = self.args.out.join(format!("{}.csv", self.label));
        let json_path = self.args.out.join(format!("{}_summary.json", self.label));
        table
            .write_to(&csv_path)
            .map_err(|source| CliError::Io { path: csv_path.clone(), source })?;
        let doc = summary.as_object_mut().expect("summary is an object");
        doc.insert("library_version".into(), json!(env!("CARGO_PKG_VERSION")));
        doc.insert("config".into(), config_json);
        doc.insert("ok".into(), json!(ok));
        doc.insert("wall_clock_s".into(), json!(self.started.elapsed().as_secs_f64()));
        doc.insert("csv".into(), json!(csv_path.display().to_string()));
        let value = serde_json::Value::Object(doc.clone());
        crate::report::write_json(&json_path, &value)
            .map_err(|source| CliError::Io { path: json_path.clone(), source })?;
        match self.args.format {
            OutputFormat::Csv => print!("{}", table.to_csv()),
            OutputFormat::Json => {
                println!("{}", serde_json::to_string_pretty(&value).expect("serializable"))
            }
        }
        eprintln!(
            "{}: wrote {} and {} ({})",
            self.label,
            csv_path.display(),
            json_path.display(),
            if ok { "ok" } else { "FAILED" }
        );
        Ok(ok)
    }
}

fn cmd_spectrum(args: &CommonArgs) -> Result<bool, CliError> {
    let cfg: SpectrumCommandConfig = config::parse(&read_config_text(&args.config)?)?;
    let emitter = Emitter::new(args, cfg.label.as_deref(), "spectrum");
    let mut table = CsvTable::new(["label", "d", "trace", "opnorm", "eff_rank"]);
    for spec in &cfg.spectra {
        let model = spec.build()?;
        table.push_row(vec![
            sanitize_label(&model.label),
            fmt_usize(model.dim()),
            fmt_float(model.trace),
            fmt_float(model.op_norm),
            fmt_float(model.eff_rank),
        ]);
    }
    let summary = json!({ "command": "spectrum", "rows": table.rows.len() });
    let config_json = serde_json::to_value(&cfg).expect("serializable");
    emitter.emit(&table, config_json, summary, true)
}

fn cmd_verify_upper(args: &CommonArgs) -> Result<bool, CliError> {
    let mut cfg: VerifyUpperConfig = config::parse(&read_config_text(&args.config)?)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    let emitter = Emitter::new(args, cfg.label.as_deref(), "verify_upper");
    let model = cfg.model.build()?;
    let method = parse_norm_method(&cfg.norm_method)?;
    let profile =
        experiments::tail_profile(&model, cfg.n, cfg.reps, cfg.seed, &cfg.u_grid, method)?;

    let mut table = CsvTable::new(["u", "quantile", "reliable", "hp_rate", "ratio"]);
    for (point, q) in profile.points.iter().zip(&profile.stats.quantiles) {
        table.push_row(vec![
            fmt_float(point.u),
            fmt_float(point.quantile),
            fmt_bool(q.reliable),
            fmt_float(point.predictor),
            fmt_float(point.quantile / point.predictor),
        ]);
    }
    let ratios_ok = profile
        .points
        .iter()
        .all(|p| (p.quantile / p.predictor).is_finite() && p.quantile / p.predictor > 0.0);
    let fit_ok = match cfg.min_r_squared {
        Some(min) => profile.fit.r_squared >= min && profile.fit.slope > 0.0,
        None => true,
    };
    let ok = ratios_ok && fit_ok;
    let summary = json!({
        "command": "verify-upper",
        "mean": profile.stats.mean,
        "std_error": profile.stats.std_error,
        "fit": {
            "slope": profile.fit.slope,
            "intercept": profile.fit.intercept,
            "r_squared": profile.fit.r_squared,
        },
        "min_r_squared": cfg.min_r_squared,
        "ratios_ok": ratios_ok,
        "fit_ok": fit_ok,
    });
    let config_json = serde_json::to_value(&cfg).expect("serializable");
    emitter.emit(&table, config_json, summary, ok)
}

fn cmd_verify_lower(args: &CommonArgs) -> Result<bool, CliError> {
    let mut cfg: VerifyLowerConfig = config::parse(&read_config_text(&args.config)?)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    let emitter = Emitter::new(args, cfg.label.as_deref(), "verify_lower");
    let model = cfg.model.build_joint()?;
    let method = parse_norm_method(&cfg.norm_method)?;
    let report = experiments::lower_bound_decomposition(&model, cfg.n, cfg.reps, cfg.seed, method)?;

    let mut table = CsvTable::new([
        "n",
        "reps",
        "mean_a",
        "se_a",
        "mean_b",
        "se_b",
        "mean_total",
        "se_total",
        "margin_vs_a",
        "margin_vs_a_se",
        "margin_vs_b",
        "margin_vs_b_se",
        "margin_vs_half_sum",
        "margin_vs_half_sum_se",
        "lemma_rate",
        "gaussian_rate",
        "total_over_gaussian",
    ]);
    let ratio = report.mean_total / report.gaussian_rate;
    table.push_row(vec![
        fmt_usize(cfg.n),
        fmt_usize(report.reps),
        fmt_float(report.mean_a),
        fmt_float(report.se_a),
        fmt_float(report.mean_b),
        fmt_float(report.se_b),
        fmt_float(report.mean_total),
        fmt_float(report.se_total),
        fmt_float(report.margin_vs_a.0),
        fmt_float(report.margin_vs_a.1),
        fmt_float(report.margin_vs_b.0),
        fmt_float(report.margin_vs_b.1),
        fmt_float(report.margin_vs_half_sum.0),
        fmt_float(report.margin_vs_half_sum.1),
        report.lemma_rate.map(fmt_float).unwrap_or_default(),
        fmt_float(report.gaussian_rate),
        fmt_float(ratio),
    ]);

    let m = cfg.margin_sigmas;
    let no_cancellation = report.margin_vs_a.0 >= -m * report.margin_vs_a.1
        && report.margin_vs_b.0 >= -m * report.margin_vs_b.1
        && report.margin_vs_half_sum.0 >= -m * report.margin_vs_half_sum.1;
    let ok = no_cancellation && ratio.is_finite() && ratio > 0.0;
    let summary = json!({
        "command": "verify-lower",
        "no_cancellation": no_cancellation,
        "total_over_gaussian": ratio,
        "margin_sigmas": m,
    });
    let config_json = serde_json::to_value(&cfg).expect("serializable");
    emitter.emit(&table, config_json, summary, ok)
}

fn cmd_sweep(args: &CommonArgs) -> Result<bool, CliError> {
    let mut cfg: SweepCommandConfig = config::parse(&read_config_text(&args.config)?)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    let emitter = Emitter::new(args, cfg.label.as_deref(), "sweep");
    let method = parse_norm_method(&cfg.norm_method)?;
    let cells = cfg
        .cells
        .iter()
        .map(|cell| {
            Ok(experiments::SweepCell {
                label: sanitize_label(&cell.label),
                model: cell.model.build()?,
                n_values: cell.n.clone(),
            })
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let plan = experiments::SweepPlan {
        cells,
        reps: cfg.reps,
        master_seed: cfg.seed,
        u_grid: cfg.u_grid.clone(),
        norm_method: method,
    };
    let records = experiments::run_sweep(&plan);

    let mut header: Vec<String> = [
        "grid_index",
        "cell",
        "n",
        "reps",
        "family",
        "coupling",
        "d_x",
        "d_y",
        "r_x",
        "r_y",
        "opnorm_x",
        "opnorm_y",
        "mean",
        "std_error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for u in &cfg.u_grid {
        header.push(format!("q_u{u}"));
        header.push(format!("q_u{u}_reliable"));
        header.push(format!("hp_rate_u{u}"));
    }
    header.extend(
        ["expectation_rate", "gaussian_rate", "mean_over_expectation", "mean_over_gaussian", "error"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut table = CsvTable::new(header);
    for r in &records {
        let mut row = vec![
            fmt_usize(r.grid_index),
            r.cell_label.clone(),
            fmt_usize(r.n),
            fmt_usize(r.reps),
            r.family.clone(),
            sanitize_label(&r.coupling),
            fmt_usize(r.d_x),
            fmt_usize(r.d_y),
            fmt_float(r.r_x),
            fmt_float(r.r_y),
            fmt_float(r.opnorm_x),
            fmt_float(r.opnorm_y),
        ];
        match &r.stats {
            Some(s) => {
                row.push(fmt_float(s.mean));
                row.push(fmt_float(s.std_error));
                for q in &s.quantiles {
                    row.push(fmt_float(q.value));
                    row.push(fmt_bool(q.reliable));
                    let rate = r.hp_rates.iter().find(|(u, _)| *u == q.u).map(|(_, v)| *v);
                    row.push(rate.map(fmt_float).unwrap_or_default());
                }
                row.push(fmt_float(r.expectation_rate));
                row.push(fmt_float(r.gaussian_rate));
                row.push(r.mean_over_expectation.map(fmt_float).unwrap_or_default());
                row.push(r.mean_over_gaussian.map(fmt_float).unwrap_or_default());
                row.push(String::new());
            }
            None => {
                row.push(String::new());
                row.push(String::new());
                for _ in &cfg.u_grid {
                    row.push(String::new());
                    row.push(String::new());
                    row.push(String::new());
                }
                row.push(fmt_float(r.expectation_rate));
                row.push(fmt_float(r.gaussian_rate));
                row.push(String::new());
                row.push(String::new());
                row.push(sanitize_label(r.error.as_deref().unwrap_or("unknown")));
            }
        }
        table.push_row(row);
    }

    let failed_cells = records.iter().filter(|r| r.error.is_some()).count();
    let mut ok = failed_cells == 0;
    let mut analysis_json = serde_json::Map::new();
    if let Some(analysis) = &cfg.analysis {
        if analysis.fit_scaling {
            let mut fits = Vec::new();
            for cell in &plan.cells {
                let cell_records: Vec<experiments::SweepRecord> = records
                    .iter()
                    .filter(|r| r.cell_label == cell.label)
                    .cloned()
                    .collect();
                if cell_records.len() < 3 {
                    continue;
                }
                match experiments::fit_scaling(&cell_records) {
                    Ok(fit) => {
                        let mut fit_ok = true;
                        if let Some([lo, hi]) = analysis.expect_slope {
                            fit_ok &= fit.fit.slope >= lo && fit.fit.slope <= hi;
                        }
                        if let Some(min) = analysis.min_r_squared {
                            fit_ok &= fit.fit.r_squared >= min;
                        }
                        ok &= fit_ok;
                        fits.push(json!({
                            "cell": cell.label,
                            "regime": format!("{:?}", fit.regime),
                            "slope": fit.fit.slope,
                            "intercept": fit.fit.intercept,
                            "r_squared": fit.fit.r_squared,
                            "ok": fit_ok,
                        }));
                    }
                    Err(e) => {
                        // a refused fit fails the run only when expectations were set
                        let refusal_ok =
                            analysis.expect_slope.is_none() && analysis.min_r_squared.is_none();
                        ok &= refusal_ok;
                        fits.push(json!({
                            "cell": cell.label,
                            "refused": e.to_string(),
                            "ok": refusal_ok,
                        }));
                    }
                }
            }
            analysis_json.insert("scaling_fits".into(), json!(fits));
        }
        let means: Vec<f64> =
            records.iter().filter_map(|r| r.stats.as_ref().map(|s| s.mean)).collect();
        if let Some(cap) = analysis.max_mean_spread {
            let spread = spread_of(&means);
            let pass = spread.is_some_and(|s| s <= cap);
            ok &= pass;
            analysis_json
                .insert("mean_spread".into(), json!({ "spread": spread, "cap": cap, "ok": pass }));
        }
        if let Some(cap) = analysis.max_gaussian_ratio_spread {
            let ratios: Vec<f64> = records.iter().filter_map(|r| r.mean_over_gaussian).collect();
            let spread = spread_of(&ratios);
            let pass = spread.is_some_and(|s| s <= cap);
            ok &= pass;
            analysis_json.insert(
                "gaussian_ratio_spread".into(),
                json!({ "spread": spread, "max": ratios.iter().cloned().fold(0.0_f64, f64::max),
                        "min": ratios.iter().cloned().fold(f64::INFINITY, f64::min),
                        "cap": cap, "ok": pass }),
            );
        }
    }

    let summary = json!({
        "command": "sweep",
        "grid_points": records.len(),
        "failed_cells": failed_cells,
        "analysis": serde_json::Value::Object(analysis_json),
        "wall_clock_per_cell_s": records.iter().map(|r| r.wall_clock_s).collect::<Vec<_>>(),
    });
    let config_json = serde_json::to_value(&cfg).expect("serializable");
    emitter.emit(&table, config_json, summary, ok)
}

fn cmd_isserlis(args: &CommonArgs) -> Result<bool, CliError> {
    let mut cfg: IsserlisConfig = config::parse(&read_config_text(&args.config)?)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    if cfg.d_max == 0 || cfg.triples == 0 || cfg.reps < 1000 {
        return Err(CliError::Invalid(
            "isserlis config needs d_max >= 1, triples >= 1, reps >= 1000".into(),
        ));
    }
    let emitter = Emitter::new(args, cfg.label.as_deref(), "isserlis");

    let mut table = CsvTable::new([
        "triple",
        "d_x",
        "d_y",
        "rho",
        "closed_form",
        "mc_variance",
        "mc_se",
        "sandwich_lower",
        "sandwich_upper",
        "within_margin",
    ]);
    let mut all_ok = true;
    for t in 0..cfg.triples {
        let mut rng = stream_rng(mix_seed(cfg.seed, t as u64), StreamRole::Primary);
        let d_x = rng.random_range(1..=cfg.d_max);
        let d_y = rng.random_range(1..=cfg.d_max);
        let rho: f64 = rng.random_range(0.0..0.9);
        let spec_x = SpectrumSpec::new(
            SpectrumFamily::Custom {
                eigenvalues: (0..d_x).map(|_| rng.random_range(0.5..3.0)).collect(),
            },
            1.0,
        )
        .expect("valid spectrum");
        let spec_y = SpectrumSpec::new(
            SpectrumFamily::Custom {
                eigenvalues: (0..d_y).map(|_| rng.random_range(0.5..3.0)).collect(),
            },
            1.0,
        )
        .expect("valid spectrum");
        let sigma_x = build_covariance(
            &spec_x,
            Rotation::Random { seed: rng.random::<u64>() },
            format!("x{t}"),
        )
        .expect("valid model");
        let sigma_y = build_covariance(
            &spec_y,
            Rotation::Random { seed: rng.random::<u64>() },
            format!("y{t}"),
        )
        .expect("valid model");
        let model = joint::assemble(&sigma_x, &sigma_y, &CouplingSpec::aligned(rho)?)?;

        let mut v = DVector::from_fn(d_x, |_, _| rng.sample::<f64, _>(StandardNormal));
        v /= v.norm();
        let mut h = DVector::from_fn(d_y, |_, _| rng.sample::<f64, _>(StandardNormal));
        h /= h.norm();

        let closed = bounds::isserlis_variance(
            &model.sigma_x.matrix,
            &model.sigma_y.matrix,
            &model.sigma_xy,
            &v,
            &h,
        )?;
        let lower = (v.transpose() * model.sigma_x.matrix.as_matrix() * &v)[(0, 0)]
            * (h.transpose() * model.sigma_y.matrix.as_matrix() * &h)[(0, 0)];
        let sandwich_ok = closed >= lower - 1e-12 && closed <= 2.0 * lower + 1e-12;

        let batch = sample_joint_gaussian(&model, cfg.reps, mix_seed(cfg.seed, 10_000 + t as u64));
        let xv = &batch.x * &v;
        let yh = &batch.y * &h;
        let prods: Vec<f64> = xv.iter().zip(yh.iter()).map(|(a, b)| a * b).collect();
        let n = prods.len() as f64;
        let mean = prods.iter().sum::<f64>() / n;
        let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = prods.iter().map(|p| (p - mean).powi(4)).sum::<f64>() / n;
        let se = ((m4 - var * var).max(0.0) / n).sqrt();

        let within = (var - closed).abs() <= cfg.margin_sigmas * se;
        let ok = within && sandwich_ok;
        all_ok &= ok;
        table.push_row(vec![
            fmt_usize(t),
            fmt_usize(d_x),
            fmt_usize(d_y),
            fmt_float(rho),
            fmt_float(closed),
            fmt_float(var),
            fmt_float(se),
            fmt_float(lower),
            fmt_float(2.0 * lower),
            fmt_bool(ok),
        ]);
    }
    let summary = json!({
        "command": "isserlis",
        "triples": cfg.triples,
        "margin_sigmas": cfg.margin_sigmas,
    });
    let config_json = serde_json::to_value(&cfg).expect("serializable");
    emitter.emit(&table, config_json, summary, all_ok)
}

fn cmd_finite_sets(args: &CommonArgs) -> Result<bool, CliError> {
    let mut cfg: FiniteSetsConfig = config::parse(&read_config_text(&args.config)?)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    if cfg.dim != 3 {
        return Err(CliError::Invalid("finite-sets ships d = 3 sphere nets only".into()));
    }
    for &u in &cfg.u_grid {
        if (-u).exp() * (cfg.reps as f64) < crate::estimators::MIN_TAIL_SAMPLES {
            return Err(CliError::Invalid(format!(
                "u = {u} unreliable at reps = {} (needs exp(-u) * reps >= 20)",
                cfg.reps
            )));
        }
    }
    let emitter = Emitter::new(args, cfg.label.as_deref(), "finite_sets");
    let mode = config::parse_mode(&cfg.mode)?;
    let t_points = experiments::fibonacci_sphere(cfg.set_size);
    let s_points = experiments::fibonacci_sphere(cfg.set_size);

    let mut table = CsvTable::new([
        "family", "n", "reps", "u", "quantile", "reliable", "rate", "ratio", "mean_sup", "se_sup",
    ]);
    let mut ratios = Vec::new();
    for (fi, family_name) in cfg.families.iter().enumerate() {
        let family = parse_family(family_name)?;
        for (ni, &n) in cfg.n.iter().enumerate() {
            let record = experiments::finite_set_verification(
                &t_points,
                &s_points,
                family,
                mode,
                n,
                cfg.reps,
                mix_seed(cfg.seed, (fi * 1000 + ni) as u64),
                &cfg.u_grid,
            )?;
            for p in &record.points {
                ratios.push(p.ratio);
                table.push_row(vec![
                    record.family.clone(),
                    fmt_usize(n),
                    fmt_usize(record.reps),
                    fmt_float(p.u),
                    fmt_float(p.quantile),
                    fmt_bool(p.reliable),
                    fmt_float(p.rate),
                    fmt_float(p.ratio),
                    fmt_float(record.mean_sup),
                    fmt_float(record.se_sup),
                ]);
            }
        }
    }
    let spread = spread_of(&ratios);
    let ok = match cfg.max_ratio_spread {
        Some(cap) => spread.is_some_and(|s| s <= cap),
        None => true,
    };
    let summary = json!({
        "command": "finite-sets",
        "cells": ratios.len(),
        "ratio_max": ratios.iter().cloned().fold(0.0_f64, f64::max),
        "ratio_min": ratios.iter().cloned().fold(f64::INFINITY, f64::min),
        "ratio_spread": spread,
        "max_ratio_spread": cfg.max_ratio_spread,
    });
    let config_json = serde_json::to_value(&cfg).expect("serializable");
    emitter.emit(&table, config_json, summary, ok)
}

fn spread_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return None;
    }
    let max = values.iter().cloned().fold(0.0_f64, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    Some(max / min)
}
