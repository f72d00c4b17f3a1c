use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mploss::{cmd_derive, cmd_evaluate, cmd_gen_data, cmd_slice, cmd_train, error_line, Run, DEFAULT_SLICE_POINTS};
use mploss_core::train::ObjectiveRegistry;
use mploss_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mploss", version, about = "Value-oriented forecasting losses from dispatch LPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving every artifact.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Derive the piecewise-linear loss and its region report.
    Derive {
        #[command(flatten)]
        common: Common,
    },
    /// Train a forecaster.
    Train {
        #[command(flatten)]
        common: Common,
        /// value | quality | diffopt
        #[arg(long)]
        mode: String,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sample the loss along ŷ at fixed load and realised wind.
    Slice {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        l: f64,
        #[arg(long)]
        y: f64,
        #[arg(long, default_value_t = DEFAULT_SLICE_POINTS)]
        points: usize,
    },
    /// Write a synthetic train/test dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<String> {
    let load = |c: &Common| Run::load(&c.config, c.seed);
    match cli.command {
        Command::Derive { common } => {
            let r = cmd_derive(&load(&common)?, &common.out)?;
            Ok(format!("derived K_D={} K_R={} joint={}", r.k_d, r.k_r, r.joint_regions))
        }
        Command::Train { common, mode } => {
            let registry = ObjectiveRegistry::with_builtins();
            if !registry.names().contains(&mode.as_str()) {
                return Err(Error::UnknownMode(mode));
            }
            let m = cmd_train(&load(&common)?, &mode, &common.out, &registry)?;
            Ok(format!("trained {} rmse={:.6} ams={:.6} wall_time={:.3}s", m.mode, m.rmse, m.ams, m.wall_time))
        }
        Command::Evaluate { common, checkpoint } => {
            let m = cmd_evaluate(&load(&common)?, &checkpoint, &common.out)?;
            Ok(format!("rmse={:.6} ams={:.6}", m.rmse, m.ams))
        }
        Command::Slice { common, l, y, points } => {
            let s = cmd_slice(&load(&common)?, l, y, points, &common.out)?;
            Ok(format!("slice segments={} breakpoints={:?}", s.segments.len(), s.breakpoints))
        }
        Command::GenData { common } => {
            let (a, b) = cmd_gen_data(&load(&common)?, &common.out)?;
            Ok(format!("wrote {a} train and {b} test samples"))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
