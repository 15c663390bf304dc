//! Command-line interface: `run`, `sweep`, `se`, `selftest`.
//!
//! Exit codes: 0 success, 2 malformed config/usage, 3 numerical divergence
//! (diagnostic JSON with the iteration trace on stderr), 1 other failures.
//! All randomness descends from `--seed`; repeated invocations with the
//! same seed and config produce byte-identical CSV files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use quantamp_core::amp_solver::SolverError;

use crate::config::{ExperimentConfig, Method, SweepConfig};
use crate::csvio;
use crate::runner::{self, RunError};
use crate::se_compare::{se_empirical, se_prediction, SeComparison};

#[derive(Parser)]
#[command(
    name = "quantamp",
    version,
    about = "Sparse recovery from 1-bit and multi-bit quantized measurements: \
             AMP with built-in parameter estimation, state-evolution prediction, \
             and a benchmark harness"
)]
pub struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all trials of a single experiment cell from a JSON config.
    Run(RunArgs),
    /// Run a grid over sampling ratios × SNRs × methods from a JSON config.
    Sweep(SweepArgs),
    /// State-evolution MSE prediction, optionally overlaid with empirical runs.
    Se(SeArgs),
    /// Run the oracle and invariant check suites.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config (see README for the schema).
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Trial-count override (e.g. desk-scale 20 instead of the default 100).
    #[arg(long)]
    trials: Option<usize>,
    /// Method override: amp_pe | amp_oracle | amp_awgn | qiht.
    #[arg(long)]
    method: Option<String>,
    /// Sampling ratio override.
    #[arg(long)]
    sampling_ratio: Option<f64>,
    /// Pre-quantization SNR override (dB).
    #[arg(long)]
    snr_db: Option<f64>,
    /// Output path prefix for `<prefix>_trials.csv` and `<prefix>_summary.json`.
    #[arg(long, default_value = "quantamp_run")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output path prefix for `<prefix>_cells.csv` and `<prefix>_summary.json`.
    #[arg(long, default_value = "quantamp_sweep")]
    out: PathBuf,
}

#[derive(Args)]
struct SeArgs {
    /// Sampling ratio β = M/N.
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    /// Nonzero fraction of the Bernoulli-Gaussian signal.
    #[arg(long, default_value_t = 0.5)]
    sparsity: f64,
    #[arg(long, default_value_t = 30.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 1)]
    bits: u32,
    #[arg(long, default_value_t = 200_000)]
    mc_samples: usize,
    #[arg(long, default_value_t = 30)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Freeze the true parameters instead of estimating them.
    #[arg(long)]
    oracle_params: bool,
    /// Also run empirical trials and emit an aligned overlay CSV.
    #[arg(long)]
    overlay: bool,
    /// Signal length for the empirical overlay.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Trials for the empirical overlay.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Output path prefix for `<prefix>_se.csv` (and `<prefix>_se_overlay.csv`).
    #[arg(long, default_value = "quantamp")]
    out: PathBuf,
}

#[derive(Args)]
struct SelftestArgs {
    /// Reduced grid sizes for a quick sanity pass.
    #[arg(long)]
    fast: bool,
}

fn error_json(kind: &str, err: &dyn std::fmt::Display) -> String {
    json!({"error": err.to_string(), "kind": kind}).to_string()
}

fn write_file(path: &Path, contents: &str) -> Result<(), std::io::Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, contents)
}

fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("config parse error: {e}"))
}

fn prefixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(suffix);
    prefix.with_file_name(name)
}

/// Maps a failed run to its exit code, printing machine-readable JSON.
fn fail(err: RunError) -> ExitCode {
    match &err {
        RunError::Config(_) | RunError::Gen(_) => {
            eprintln!("{}", error_json("config", &err));
            ExitCode::from(2)
        }
        RunError::Solver(SolverError::Diverged { iteration, reason, trace }) => {
            let msg = json!({
                "error": format!("divergence at iteration {iteration}: {reason}"),
                "kind": "divergence",
                "trace": trace,
            });
            eprintln!("{msg}");
            ExitCode::from(3)
        }
        _ => {
            eprintln!("{}", error_json("runtime", &err));
            ExitCode::from(1)
        }
    }
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    runner::init_thread_pool();
    match cli.cmd {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Se(a) => cmd_se(a),
        Command::Selftest(a) => cmd_selftest(a),
    }
}

fn cmd_run(a: RunArgs) -> ExitCode {
    let mut cfg: ExperimentConfig = match load_config(&a.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", error_json("config", &e));
            return ExitCode::from(2);
        }
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(r) = a.sampling_ratio {
        cfg.sampling_ratio = r;
    }
    if let Some(s) = a.snr_db {
        cfg.pre_qnt_snr_db = s;
    }
    if let Some(m) = a.method {
        cfg.method = match m.as_str() {
            "amp_pe" => Method::AmpPe,
            "amp_oracle" => Method::AmpOracle,
            "amp_awgn" => Method::AmpAwgn,
            "qiht" => Method::Qiht,
            other => {
                eprintln!("{}", error_json("config", &format!("unknown method {other}")));
                return ExitCode::from(2);
            }
        };
    }
    if let Err(e) = cfg.validate() {
        eprintln!("{}", error_json("config", &e));
        return ExitCode::from(2);
    }
    let trials = match runner::run_cell(&cfg, 0) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let agg = runner::aggregate(&trials);
    let csv = csvio::trials_csv(cfg.sampling_ratio, cfg.pre_qnt_snr_db, cfg.method.name(), &trials);
    let summary = json!({
        "config": cfg,
        "aggregate": agg,
        "runtime_seconds_total": trials.iter().map(|t| t.runtime_seconds).sum::<f64>(),
    });
    let csv_path = prefixed(&a.out, "_trials.csv");
    let json_path = prefixed(&a.out, "_summary.json");
    if let Err(e) = write_file(&csv_path, &csv)
        .and_then(|_| write_file(&json_path, &serde_json::to_string_pretty(&summary).unwrap()))
    {
        eprintln!("{}", error_json("io", &e));
        return ExitCode::from(1);
    }
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    ExitCode::SUCCESS
}

fn cmd_sweep(a: SweepArgs) -> ExitCode {
    let mut cfg: SweepConfig = match load_config(&a.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", error_json("config", &e));
            return ExitCode::from(2);
        }
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("{}", error_json("config", &e));
        return ExitCode::from(2);
    }
    let cells = match runner::run_sweep(&cfg) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let csv = csvio::cells_csv(&cells);
    let summary = json!({"config": cfg, "cells": cells});
    let csv_path = prefixed(&a.out, "_cells.csv");
    let json_path = prefixed(&a.out, "_summary.json");
    if let Err(e) = write_file(&csv_path, &csv)
        .and_then(|_| write_file(&json_path, &serde_json::to_string_pretty(&summary).unwrap()))
    {
        eprintln!("{}", error_json("io", &e));
        return ExitCode::from(1);
    }
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    ExitCode::SUCCESS
}

fn cmd_se(a: SeArgs) -> ExitCode {
    let cfg = SeComparison {
        n: a.n,
        beta: a.beta,
        sparsity: a.sparsity,
        snr_db: a.snr_db,
        bits: a.bits,
        iters: a.iters,
        mc_samples: a.mc_samples,
        trials: a.trials,
        seed: a.seed,
        estimate_params: !a.oracle_params,
    };
    if !(cfg.sparsity > 0.0 && cfg.sparsity <= 1.0) || cfg.bits == 0 || !(cfg.beta > 0.0) {
        eprintln!("{}", error_json("config", &"invalid se parameters"));
        return ExitCode::from(2);
    }
    let pred = match se_prediction(&cfg) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    for w in &pred.warnings {
        eprintln!("warning: {w}");
    }
    let se_path = prefixed(&a.out, "_se.csv");
    if let Err(e) = write_file(&se_path, &pred.to_csv()) {
        eprintln!("{}", error_json("io", &e));
        return ExitCode::from(1);
    }
    println!("wrote {}", se_path.display());
    if a.overlay {
        let (mean, std) = match se_empirical(&cfg) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        let csv = csvio::se_overlay_csv(&pred.tau_x_bar, &pred.mc_stderr, &mean, &std);
        let path = prefixed(&a.out, "_se_overlay.csv");
        if let Err(e) = write_file(&path, &csv) {
            eprintln!("{}", error_json("io", &e));
            return ExitCode::from(1);
        }
        println!("wrote {}", path.display());
    }
    ExitCode::SUCCESS
}

fn cmd_selftest(a: SelftestArgs) -> ExitCode {
    let results = crate::selftest::run_selftest(a.fast);
    let mut ok = true;
    for r in &results {
        println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        ok &= r.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
