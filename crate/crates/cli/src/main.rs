//! `fewbody`: predict loss rates, simulate shot data, fit rates and select the
//! pair-loss intensity law.
//!
//! Exit codes: 0 success, 2 invalid input, 3 I/O failure, 4 unparsable file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fewbody_core::config::angular_to_khz;
use fewbody_core::correlations::{predict_gamma3, scaling_exponent};
use fewbody_core::dynamics::trajectory_analytic;
use fewbody_core::inference::{fit_rates, fit_scaling, occupancy_series, FitOptions, ScalingPoint};
use fewbody_core::io::{self, FitReport, PredictionRow, ScalingReport};
use fewbody_core::lab::simulate_dataset;
use fewbody_core::trap::TrapState;
use fewbody_core::{Error, PhysicalConstants, RateCoefficients, RunConfig, ShotDataset, Templates};

#[derive(Parser)]
#[command(name = "fewbody", version, about = "Few-atom loss kinetics: predict, simulate, fit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitFlags {
    /// Hold Γ₁ at zero.
    #[arg(long)]
    fix_gamma1: bool,
    /// Fit a single pair-loss rate, Γ̃₂ = Γ₂.
    #[arg(long)]
    tie_gamma2: bool,
    /// Photon-count templates (CSV: photon_count,p0,p1,p2,p3) instead of the readout model.
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the three Γ₃ models (and Γ₂ if a law is configured) against power.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Beam powers in mW, comma separated.
        #[arg(long, value_delimiter = ',')]
        powers: Option<Vec<f64>>,
    },
    /// Simulate a shot dataset from the configured design and rates.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decompose a dataset's histograms and fit the rate model.
    Fit {
        /// Dataset envelope written by `simulate`.
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: FitFlags,
    },
    /// Select the pair-loss intensity law from fit reports at several powers.
    Scan {
        /// Fit reports (JSON).
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// simulate → fit → scan over every configured power.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        powers: Option<Vec<f64>>,
        #[command(flatten)]
        flags: FitFlags,
    },
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => 3,
            Error::Parse { .. } | Error::Json(_) => 4,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: 3, message: format!("{}: {e}", path.display()) }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Predict { common, powers } => predict(&common, powers),
        Command::Simulate { common, seed } => simulate(&common, seed),
        Command::Fit { dataset, common, flags } => fit(&dataset, &common, &flags),
        Command::Scan { reports, out } => scan(&reports, out.as_deref().unwrap_or(Path::new("."))),
        Command::Pipeline { common, seed, powers, flags } => pipeline(&common, seed, powers, &flags),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fewbody: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let Some(path) = &common.config else { return Ok(RunConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    RunConfig::from_json_str(&text).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn output_dir(common: &Common, cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

/// Digest of the effective configuration, used as provenance for derived tables.
fn config_digest(cfg: &RunConfig) -> String {
    io::sha256_hex(&serde_json::to_vec(cfg).expect("config serialises"))
}

fn predict(common: &Common, powers: Option<Vec<f64>>) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    if let Some(p) = powers {
        cfg.powers_mw = p;
    }
    cfg.validate()?;
    if cfg.powers_mw.is_empty() {
        return Err(invalid("no powers requested"));
    }
    let dir = output_dir(common, &cfg)?;
    let rows = prediction_rows(&cfg)?;
    write(&dir.join("predictions.csv"), &io::prediction_csv(&rows, &config_digest(&cfg)))
}

fn prediction_rows(cfg: &RunConfig) -> CliResult<Vec<PredictionRow>> {
    let trap = cfg.trap_config()?;
    let mc = cfg.microscopic_constants()?;
    let constants = PhysicalConstants::RB85;
    let gamma2_law = match cfg.gamma2_scaling_m {
        None => None,
        Some(m) => {
            let rates = cfg
                .rates_per_s
                .ok_or_else(|| invalid("gamma2_scaling_m needs rates_per_s.gamma2 as its reference value"))?;
            let omega_ref = TrapState::new(&trap, &constants, cfg.design.power_mw * 1e-3)?.omega_perp();
            Some((scaling_exponent(m)?, rates.gamma2, omega_ref))
        }
    };
    cfg.powers_mw
        .iter()
        .map(|&p| {
            let prediction = predict_gamma3(&trap, &constants, &mc, p * 1e-3, cfg.g3_profile)?;
            let gamma2 = gamma2_law.map(|(e, g2, w0)| g2 * (prediction.omega_perp / w0).powf(e));
            Ok(PredictionRow { prediction, gamma2 })
        })
        .collect()
}

fn require_seed(cfg: &RunConfig, seed: Option<u64>) -> CliResult<u64> {
    seed.or(cfg.seed).ok_or_else(|| invalid("simulation needs a seed (config `seed` or --seed)"))
}

fn require_rates(cfg: &RunConfig) -> CliResult<RateCoefficients> {
    cfg.rates_per_s.ok_or_else(|| invalid("simulation needs `rates_per_s` in the config"))
}

fn simulate(common: &Common, seed: Option<u64>) -> CliResult<()> {
    let cfg = load_config(common)?;
    let seed = require_seed(&cfg, seed)?;
    let rates = require_rates(&cfg)?;
    let dir = output_dir(common, &cfg)?;
    let ds = simulate_dataset(&cfg.experiment_design()?, &rates, &cfg.readout, seed)?;
    io::write_dataset(&ds, &dir.join("dataset.json"))?;
    Ok(())
}

fn templates_for(ds: &ShotDataset, cfg: &RunConfig, flags: &FitFlags) -> CliResult<Templates> {
    match &flags.templates {
        Some(path) => Ok(io::read_templates(path)?),
        None => {
            let max_bin = cfg.fit.max_bin.unwrap_or_else(|| ds.readout.default_max_bin());
            Ok(ds.readout.templates(max_bin)?)
        }
    }
}

fn fit_options(cfg: &RunConfig, flags: &FitFlags) -> FitOptions {
    let mut o = cfg.fit.options();
    o.fix_gamma1 |= flags.fix_gamma1;
    o.tie_gamma2 |= flags.tie_gamma2;
    o
}

/// Fits one dataset and writes `fit.json` and `populations.csv` into `dir`.
fn fit_dataset(ds: &ShotDataset, digest: &str, cfg: &RunConfig, flags: &FitFlags, dir: &Path) -> CliResult<FitReport> {
    let templates = templates_for(ds, cfg, flags)?;
    let series = occupancy_series(ds, &templates, cfg.fit.method)?;
    let result = fit_rates(&series, &fit_options(cfg, flags))?;
    let state = TrapState::new(&cfg.trap_config()?, &PhysicalConstants::RB85, ds.design.power)?;
    let report = FitReport::new(&result, digest, ds.design.power * 1e3, angular_to_khz(state.omega_perp()));
    io::write_json(&report, &dir.join("fit.json"))?;

    let t_max = ds.design.wait_times.last().copied().unwrap_or(0.0);
    let grid: Vec<f64> = (0..=200).map(|i| t_max * f64::from(i) / 200.0).collect();
    let traj = trajectory_analytic(&result.fitted_initials, &result.rates, &grid)?;
    write(&dir.join("populations.csv"), &io::trajectory_csv(&traj, digest))?;
    Ok(report)
}

fn fit(dataset: &Path, common: &Common, flags: &FitFlags) -> CliResult<()> {
    let cfg = load_config(common)?;
    let bytes = fs::read(dataset).map_err(|e| io_failure(dataset, e))?;
    let ds = io::read_dataset(dataset).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", dataset.display(), f.message);
        f
    })?;
    let dir = output_dir(common, &cfg)?;
    fit_dataset(&ds, &io::sha256_hex(&bytes), &cfg, flags, &dir)?;
    Ok(())
}

fn scan_reports(reports: &[(FitReport, Vec<u8>)]) -> CliResult<ScalingReport> {
    if reports.len() < 2 {
        return Err(invalid(format!("scan needs at least two fit reports, got {}", reports.len())));
    }
    let points = reports
        .iter()
        .map(|(r, _)| {
            let sigma = r.errors.gamma2.std_error.filter(|s| *s > 0.0).ok_or_else(|| {
                invalid(format!("fit report at {} mW has no uncertainty on gamma2", r.power_mw))
            })?;
            Ok(ScalingPoint {
                omega_perp: r.omega_perp_khz * 1e3 * std::f64::consts::TAU,
                gamma2: r.rates.gamma2,
                sigma,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let fit = fit_scaling(&points, &[0, 1, 2])?;
    let joined: Vec<u8> = reports.iter().flat_map(|(_, b)| b.iter().copied()).collect();
    Ok(ScalingReport::new(&fit, &io::sha256_hex(&joined)))
}

fn scan(paths: &[PathBuf], out: &Path) -> CliResult<()> {
    let reports = paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| io_failure(p, e))?;
            let report = io::read_fit_report(p)?;
            Ok((report, bytes))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let report = scan_reports(&reports)?;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    io::write_json(&report, &out.join("scaling.json"))?;
    Ok(())
}

/// Rates at `power` from the configured rates at the design power:
/// Γ₃ ∝ P^(3/2), Γ₂ and Γ̃₂ ∝ ω⊥^(2m+3/2) ∝ P^((2m+3/2)/2), Γ₁ unchanged.
fn rates_at_power(base: &RateCoefficients, m: u32, design_power: f64, power: f64) -> CliResult<RateCoefficients> {
    let ratio = power / design_power;
    let pair = ratio.powf(scaling_exponent(m)? / 2.0);
    Ok(RateCoefficients {
        gamma1: base.gamma1,
        gamma2: base.gamma2 * pair,
        gamma2_tilde: base.gamma2_tilde * pair,
        gamma3: base.gamma3 * ratio.powf(1.5),
    })
}

fn pipeline(common: &Common, seed: Option<u64>, powers: Option<Vec<f64>>, flags: &FitFlags) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    if let Some(p) = powers {
        cfg.powers_mw = p;
    }
    cfg.validate()?;
    let seed = require_seed(&cfg, seed)?;
    let rates = require_rates(&cfg)?;
    if cfg.powers_mw.len() < 2 {
        return Err(invalid("pipeline needs at least two powers"));
    }
    let m = cfg.gamma2_scaling_m.unwrap_or(2);
    let dir = output_dir(common, &cfg)?;
    let rows = prediction_rows(&RunConfig { gamma2_scaling_m: Some(m), ..cfg.clone() })?;
    write(&dir.join("predictions.csv"), &io::prediction_csv(&rows, &config_digest(&cfg)))?;

    let base_design = cfg.experiment_design()?;
    let mut reports = Vec::new();
    for (i, &p) in cfg.powers_mw.iter().enumerate() {
        let sub = dir.join(format!("power_{p}mW"));
        fs::create_dir_all(&sub).map_err(|e| io_failure(&sub, e))?;
        let design = fewbody_core::ExperimentDesign { power: p * 1e-3, ..base_design.clone() };
        let r = rates_at_power(&rates, m, base_design.power, design.power)?;
        let ds = simulate_dataset(&design, &r, &cfg.readout, seed.wrapping_add(i as u64))?;
        let envelope = sub.join("dataset.json");
        io::write_dataset(&ds, &envelope)?;
        let bytes = fs::read(&envelope).map_err(|e| io_failure(&envelope, e))?;
        let report = fit_dataset(&ds, &io::sha256_hex(&bytes), &cfg, flags, &sub)?;
        let report_bytes = fs::read(sub.join("fit.json")).map_err(|e| io_failure(&sub, e))?;
        reports.push((report, report_bytes));
    }
    let scaling = scan_reports(&reports)?;
    io::write_json(&scaling, &dir.join("scaling.json"))?;
    Ok(())
}
