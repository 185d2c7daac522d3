use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use fgmpc_core::sim::{compute_metrics, percentile, run_scenario};

use crate::config::ScenarioFile;
use crate::error::CliError;
use crate::jacobians::{run_suite, TOLERANCE};
use crate::output::{write_trajectory, RunSummary, WallClock};

#[derive(Debug, Parser)]
#[command(name = "fgmpc", version, about = "Factor-graph MPC with control barrier functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write trajectory.csv and summary.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dotted-path override applied to the scenario file, e.g. cbf.alpha=0.3.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compare analytic factor Jacobians against finite differences.
    CheckJacobians {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        /// Offset one Jacobian entry per factor; the check must then fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Report per-step solve-time statistics over repeated runs.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
        reps: u64,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Run { scenario, out, overrides } => cmd_run(scenario, out, overrides),
        Command::CheckJacobians { seed, count, inject_fault } => cmd_check_jacobians(*seed, *count as usize, *inject_fault),
        Command::Bench { scenario, reps, overrides } => cmd_bench(scenario, *reps as usize, overrides),
    }
}

pub fn cmd_run(path: &Path, out: &Path, overrides: &[String]) -> Result<(), CliError> {
    let file = ScenarioFile::load(path, overrides)?;
    let scenario = file.to_scenario()?;
    let log = run_scenario(&scenario, &WallClock::new()).map_err(CliError::from_core)?;

    fs::create_dir_all(out)?;
    let csv = fs::File::create(out.join("trajectory.csv"))?;
    write_trajectory(csv, &log, scenario.controller.model.control_dim(), scenario.obstacles.len())?;

    let failure = log.failure.as_ref().map(|e| e.to_string());
    if log.records.is_empty() {
        return Err(CliError::Solver(failure.unwrap_or_else(|| "no steps completed".into())));
    }
    let metrics = compute_metrics(&log, &scenario.reference).map_err(CliError::from_core)?;
    let summary = RunSummary {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: file.name.clone(),
        config_digest: file.digest(),
        completed: failure.is_none(),
        failure: failure.clone(),
        metrics: (&metrics).into(),
    };
    summary.write(&out.join("summary.json"))?;

    let dist = metrics.min_boundary_distance.map_or("n/a".to_string(), |d| format!("{d:.4} m"));
    println!(
        "{}: {} steps, rmse {:.4e} m, min boundary distance {dist}, collisions {}, solve median {:.3} ms",
        file.name, metrics.steps, metrics.rmse, metrics.collisions, metrics.solve_ms_median
    );
    match failure {
        Some(f) => Err(CliError::Solver(f)),
        None => Ok(()),
    }
}

pub fn cmd_check_jacobians(seed: u64, count: usize, inject_fault: bool) -> Result<(), CliError> {
    let reports = run_suite(seed, count, inject_fault);
    println!("{:<10} {:>8} {:>8} {:>14} {:>20}", "family", "configs", "active", "worst_error", "worst_seed");
    for r in &reports {
        println!("{:<10} {:>8} {:>8} {:>14.3e} {:>20}", r.family, r.configurations, r.active, r.worst_error, r.worst_seed);
    }
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed()).map(|r| format!("{} (seed {})", r.family, r.worst_seed)).collect();
    if failed.is_empty() {
        println!("PASS: all {} families within {TOLERANCE:e}", reports.len());
        Ok(())
    } else {
        Err(CliError::Verification(format!("Jacobian mismatch above {TOLERANCE:e} in {}", failed.join(", "))))
    }
}

pub fn cmd_bench(path: &Path, reps: usize, overrides: &[String]) -> Result<(), CliError> {
    let file = ScenarioFile::load(path, overrides)?;
    let scenario = file.to_scenario()?;
    let mut times = Vec::new();
    for _ in 0..reps {
        let log = run_scenario(&scenario, &WallClock::new()).map_err(CliError::from_core)?;
        if let Some(f) = log.failure {
            return Err(CliError::Solver(f.to_string()));
        }
        times.extend(log.records.iter().map(|r| r.solve_ms));
    }
    times.sort_by(f64::total_cmp);
    let line = serde_json::json!({
        "scenario": file.name,
        "horizon": scenario.controller.horizon,
        "reps": reps,
        "steps": times.len(),
        "median_ms": percentile(&times, 0.5),
        "p99_ms": percentile(&times, 0.99),
        "max_ms": times.last().copied().unwrap_or(0.0),
        "mean_ms": times.iter().sum::<f64>() / times.len() as f64,
    });
    println!("{line}");
    Ok(())
}
