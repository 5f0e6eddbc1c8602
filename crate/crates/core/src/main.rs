use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use conefix::cli::{exit_code, list_experiments, run, ExperimentConfig};
use conefix::quadrature::set_threads;

/// Certified fixed-point iterations for monotone concave operators.
#[derive(Parser)]
#[command(name = "conefix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config file or a built-in name.
    Run {
        config: String,
        /// Output directory; defaults to the config's `output.dir`, then
        /// `conefix-out/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in experiments.
    List,
    /// Parse and check a config without running it.
    Validate { config: String },
}

/// Worker threads from `CONEFIX_THREADS`. Unset or `0` runs serially.
fn configure_threads() -> Result<()> {
    let n = match std::env::var("CONEFIX_THREADS") {
        Ok(v) => v.trim().parse::<usize>().with_context(|| format!("CONEFIX_THREADS={v} is not a count"))?,
        Err(_) => 0,
    };
    set_threads(n);
    Ok(())
}

fn execute(cli: Cli) -> Result<u8> {
    configure_threads()?;
    match cli.command {
        Command::List => {
            print!("{}", list_experiments());
            Ok(0)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            println!("ok: {}", cfg.name);
            Ok(0)
        }
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let output = run(&cfg)?;
            let dir = out
                .or_else(|| cfg.output.dir.clone())
                .unwrap_or_else(|| PathBuf::from("conefix-out").join(&cfg.name));
            output.write(&dir).with_context(|| format!("writing results to {}", dir.display()))?;
            let checks = output.report["checklist"].as_array().cloned().unwrap_or_default();
            for c in &checks {
                println!("{} {} {}", c["status"].as_str().unwrap_or("?"), c["condition"].as_str().unwrap_or(""), c["detail"].as_str().unwrap_or(""));
            }
            println!("{}: {} (results in {})", cfg.name, if output.passed { "PASS" } else { "FAIL" }, dir.display());
            Ok(if output.passed { 0 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.chain().find_map(|c| c.downcast_ref::<conefix::Error>()).map_or(1, exit_code);
            ExitCode::from(code)
        }
    }
}
