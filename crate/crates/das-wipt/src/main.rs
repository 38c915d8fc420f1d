//! Batch sweep harness. Reads an optional JSON config, applies command
//! line overrides, runs the Monte-Carlo sweep, writes the CSV, and prints
//! the trend report.
//!
//! Exit codes: 0 on success, 2 when any trial failed to converge,
//! 3 on an invalid configuration.

use clap::Parser;
use das_wipt::model::ScenarioParams;
use das_wipt::report::Scheme;
use das_wipt::sweep::{self, SweepConfig, SweepVar, TrialStatus};
use serde::Deserialize;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "das-wipt",
    about = "Monte-Carlo sweeps of energy-efficient time/power allocation \
             for distributed-antenna downlinks with RF energy harvesting"
)]
struct Cli {
    /// JSON sweep configuration (fields: var, values, trials, base, schemes, seed).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output CSV path.
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,

    /// Base RNG seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Comma-separated schemes: uc-opt,nc-opt,uc-ft,uc-fp,nc-ft,nc-fp.
    #[arg(long)]
    schemes: Option<String>,

    /// Trials per sweep point.
    #[arg(long)]
    trials: Option<usize>,

    /// Sweep specification, e.g. `E=5e-5,1e-4,2e-4` or `P=1,2,4,6`.
    #[arg(long)]
    sweep: Option<String>,

    /// Omit the wall-time column for byte-stable output.
    #[arg(long)]
    no_wall_time: bool,
}

/// On-disk configuration; every field optional so flags can fill the rest.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    var: Option<SweepVar>,
    values: Option<Vec<f64>>,
    trials: Option<usize>,
    base: Option<ScenarioParams>,
    schemes: Option<Vec<Scheme>>,
    seed: Option<u64>,
}

fn build_config(cli: &Cli) -> Result<SweepConfig, String> {
    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("bad config: {e}"))?
        }
        None => FileConfig::default(),
    };

    let (var, values) = match &cli.sweep {
        Some(spec) => {
            let (name, list) = spec
                .split_once('=')
                .ok_or_else(|| format!("--sweep expects var=v1,v2,... got {spec:?}"))?;
            let var = SweepVar::parse(name).map_err(|e| e.to_string())?;
            let values = list
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| format!("value {v:?}: {e}")))
                .collect::<Result<Vec<f64>, String>>()?;
            (var, values)
        }
        None => {
            let var = file.var.ok_or("no sweep variable (use --sweep or config)")?;
            let values = file.values.ok_or("no sweep values (use --sweep or config)")?;
            (var, values)
        }
    };

    let schemes = match &cli.schemes {
        Some(list) => list
            .split(',')
            .map(|s| Scheme::parse(s.trim()).map_err(|e| e.to_string()))
            .collect::<Result<Vec<Scheme>, String>>()?,
        None => file.schemes.unwrap_or_else(|| Scheme::ALL.to_vec()),
    };

    Ok(SweepConfig {
        var,
        values,
        trials: cli.trials.or(file.trials).unwrap_or(100),
        base: file.base.unwrap_or_default(),
        schemes,
        seed: cli.seed.or(file.seed).unwrap_or(0),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("invalid config: {msg}");
            return ExitCode::from(3);
        }
    };
    if let Err(e) = cfg.validate() {
        eprintln!("invalid config: {e}");
        return ExitCode::from(3);
    }

    let results = match sweep::run_sweep(&cfg) {
        Ok(r) => r,
        Err(das_wipt::Error::InvalidConfig(msg)) => {
            eprintln!("invalid config: {msg}");
            return ExitCode::from(3);
        }
        Err(e) => {
            eprintln!("sweep failed: {e}");
            return ExitCode::from(2);
        }
    };

    let csv = results.to_csv(!cli.no_wall_time);
    if let Err(e) = std::fs::write(&cli.out, csv) {
        eprintln!("cannot write {}: {e}", cli.out.display());
        return ExitCode::from(2);
    }
    println!("wrote {} records to {}", results.records.len(), cli.out.display());
    print!("{}", results.summarize());

    let failures = results
        .records
        .iter()
        .filter(|r| r.status == TrialStatus::ConvergenceFailure)
        .count();
    if failures > 0 {
        eprintln!("{failures} trial(s) failed to converge");
        return ExitCode::from(2);
    }
    ExitCode::SUCCESS
}
