use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use toalign_harness::{checks, runner, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "toalign", version, about = "Task-oriented adversarial domain adaptation on synthetic images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the method × seed matrix of a config and write all artifacts.
    Run {
        config: PathBuf,
        /// Worker threads; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Write the generated splits as CSV.
    GenData {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Run the gradient, decomposition, schedule and loss checks.
    Check,
    /// Rebuild results.csv, curves and heatmaps from a finished run directory.
    Viz { run_dir: PathBuf },
}

fn load(path: &PathBuf, seed_override: Option<u64>) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed_override {
        cfg.experiment.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Run { config, jobs, out, seed_override } => {
            let cfg = load(&config, seed_override)?;
            let out = out.unwrap_or_else(|| cfg.experiment.out.clone());
            let result = runner::run(&cfg, &out, jobs)?;
            for row in &result.rows {
                let acc = row.mean_acc.map_or("-".into(), |a| format!("{a:.4}"));
                println!("{:<14} seeds {} acc {acc} ± {:.4} failures {}", row.method, row.seeds, row.std_acc.unwrap_or(0.0), row.failures);
            }
            println!("wrote {}", out.display());
            Ok(result.failures() == 0)
        }
        Command::GenData { config, out, seed_override } => {
            let cfg = load(&config, seed_override)?;
            let out = out.unwrap_or_else(|| cfg.experiment.out.clone());
            for p in runner::gen_data(&cfg, &out)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Check => {
            let outcomes = checks::all();
            for c in &outcomes {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(outcomes.iter().all(|c| c.passed))
        }
        Command::Viz { run_dir } => {
            let rows = runner::viz(&run_dir)?;
            println!("rebuilt {} rows in {}", rows.len(), run_dir.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TOALIGN_LOG", "info")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ HarnessError::Config(_)) => {
            error!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}
