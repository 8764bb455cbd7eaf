use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use touchport_core::sim::{self, check_expectations, RunOverrides, Trace};

/// Runs and inspects touchport encounter scenarios.
#[derive(Parser)]
#[command(name = "touchport", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario and check its expectations.
    Run {
        scenario: PathBuf,
        /// Replaces the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the JSON Lines trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Where to write the metrics JSON.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
    /// Recompute metrics from a trace file.
    Metrics { trace: PathBuf },
}

const EXPECTATION_FAILED: u8 = 1;
const PARSE_ERROR: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run {
            scenario,
            seed,
            trace,
            metrics,
        } => run(&scenario, seed, trace.as_deref(), metrics.as_deref()),
        Cmd::Validate { scenario } => validate(&scenario),
        Cmd::Metrics { trace } => metrics(&trace),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(PARSE_ERROR)
        }
    }
}

fn load(path: &Path) -> Result<sim::Scenario, ExitCode> {
    sim::load_scenario(path).map_err(|e| {
        for err in &e.errors {
            eprintln!("{}: {err}", path.display());
        }
        ExitCode::from(PARSE_ERROR)
    })
}

fn run(path: &Path, seed: Option<u64>, trace_out: Option<&Path>, metrics_out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let scenario = match load(path) {
        Ok(s) => s,
        Err(code) => return Ok(code),
    };
    let overrides = RunOverrides {
        seed,
        ..RunOverrides::default()
    };
    let outcome = match sim::run_with(&scenario, &overrides) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return Ok(ExitCode::from(PARSE_ERROR));
        }
    };
    if let Some(out) = trace_out {
        fs::write(out, outcome.trace.to_jsonl()).with_context(|| format!("writing {}", out.display()))?;
    }
    let metrics_json = serde_json::to_string_pretty(&outcome.metrics)?;
    if let Some(out) = metrics_out {
        fs::write(out, &metrics_json).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("{metrics_json}");

    let failures = scenario
        .expectations
        .as_ref()
        .map(|exp| check_expectations(exp, &outcome))
        .unwrap_or_default();
    if failures.is_empty() {
        eprintln!("{}: ok", scenario.name);
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &failures {
            eprintln!("{}: {f}", scenario.name);
        }
        Ok(ExitCode::from(EXPECTATION_FAILED))
    }
}

fn validate(path: &Path) -> anyhow::Result<ExitCode> {
    Ok(match load(path) {
        Ok(s) => {
            println!("{}: valid ({} devices, {} commands)", s.name, s.devices.len(), s.gesture_script.len());
            ExitCode::SUCCESS
        }
        Err(code) => code,
    })
}

fn metrics(path: &Path) -> anyhow::Result<ExitCode> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let trace = match Trace::parse_jsonl(&text) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return Ok(ExitCode::from(PARSE_ERROR));
        }
    };
    let m = sim::metrics(&trace);
    println!("{}", serde_json::to_string_pretty(&m)?);
    if m.incomplete {
        eprintln!("{}: trace never reaches Sharing", path.display());
        return Ok(ExitCode::from(EXPECTATION_FAILED));
    }
    Ok(ExitCode::SUCCESS)
}
