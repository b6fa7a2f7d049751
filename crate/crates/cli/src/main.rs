//! loft: subspace-rotation adapters at the command line.
//!
//! Exit codes: 0 success, 1 validation failure (a check suite or
//! recovery equivalence did not pass), 2 I/O or configuration error,
//! 3 numerical error.

mod commands;
mod config;
mod manifest;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use loft_kit::support::SupportMethod;

#[derive(Parser)]
#[command(
    name = "loft",
    version,
    about = "Right-multiplicative subspace-rotation adapters: checks, supports, probes, training, sweeps, recoveries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the seeded property suites and gate on the result.
    Check {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Inject a corrupted support as a negative control (must fail).
        #[arg(long, hide = true)]
        corrupt_support: bool,
    },
    /// Build a support basis from weight (and optionally gradient) CSVs.
    Support {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        grad: Option<PathBuf>,
        #[arg(long)]
        method: String,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coordinate indices (coordinate method).
        #[arg(long, value_delimiter = ',')]
        indices: Option<Vec<usize>>,
        /// Butterfly stage (butterfly method).
        #[arg(long)]
        stage: Option<usize>,
        /// Butterfly block (butterfly method).
        #[arg(long)]
        block: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Controlled probe: adapter-only updates, held-out loss per step.
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also render the trajectories as an SVG plot.
        #[arg(long)]
        svg: bool,
    },
    /// Train adapters and log dynamics at checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: bool,
    },
    /// Grid sweep over data fraction, rank, or calibration size.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Early-validation diagnostic over the first 25 update steps.
    EarlyValidation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify that recovery configurations match their references.
    Recover {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            if outcome.success {
                ExitCode::SUCCESS
            } else {
                eprintln!("validation failed");
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> loft_kit::Result<commands::CommandOutcome> {
    match cli.command {
        Command::Check {
            seed,
            out,
            corrupt_support,
        } => commands::cmd_check(seed, &commands::resolve_out(out), corrupt_support),
        Command::Support {
            weights,
            grad,
            method,
            r,
            seed,
            indices,
            stage,
            block,
            out,
        } => {
            let method = SupportMethod::parse(&method)?;
            commands::cmd_support(
                &weights,
                grad.as_deref(),
                method,
                r,
                seed,
                indices,
                stage,
                block,
                &commands::resolve_out(out),
            )
        }
        Command::Probe {
            config,
            seed,
            out,
            svg,
        } => {
            let config = override_seed(&config, seed)?;
            commands::cmd_probe(&config, &commands::resolve_out(out), svg)
        }
        Command::Train {
            config,
            seed,
            out,
            svg,
        } => {
            let config = override_seed(&config, seed)?;
            commands::cmd_train(&config, &commands::resolve_out(out), svg)
        }
        Command::Sweep { config, seed, out } => {
            let config = override_seed(&config, seed)?;
            let threads = commands::thread_cap()?;
            commands::cmd_sweep(&config, &commands::resolve_out(out), threads)
        }
        Command::EarlyValidation { config, seed, out } => {
            let config = override_seed(&config, seed)?;
            commands::cmd_early_validation(&config, &commands::resolve_out(out))
        }
        Command::Recover { config, out } => {
            commands::cmd_recover(&config, &commands::resolve_out(out))
        }
    }
}

/// `--seed N` rewrites the task and train seeds of the config into a
/// sibling temp file so the run (and its manifest hash) sees the
/// overridden values.
fn override_seed(path: &PathBuf, seed: Option<u64>) -> loft_kit::Result<PathBuf> {
    let Some(seed) = seed else {
        return Ok(path.clone());
    };
    let text = std::fs::read_to_string(path).map_err(|source| loft_kit::Error::Io {
        path: path.clone(),
        source,
    })?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| loft_kit::Error::Parse {
            path: path.clone(),
            line: e.line(),
            detail: e.to_string(),
        })?;
    for section in ["task", "train"] {
        if let Some(obj) = value.get_mut(section).and_then(|v| v.as_object_mut()) {
            obj.insert("seed".to_string(), serde_json::json!(seed));
        }
    }
    if let Some(obj) = value.get_mut("sweep").and_then(|v| v.as_object_mut()) {
        obj.insert("seeds".to_string(), serde_json::json!([seed]));
    }
    let tmp = std::env::temp_dir().join(format!(
        "loft_seed_override_{}_{seed}.json",
        std::process::id()
    ));
    std::fs::write(&tmp, serde_json::to_string_pretty(&value).expect("valid json")).map_err(
        |source| loft_kit::Error::Io {
            path: tmp.clone(),
            source,
        },
    )?;
    Ok(tmp)
}
