//! Command-line driver: configuration, checkpoints, training, interpretation
//! and metric export.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::commands::{cmd_interpret, cmd_metrics, cmd_train, config_for_checkpoint, InterpretTarget};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "flint", version, about = "Train and inspect networks with built-in attribute interpreters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Override a config entry, e.g. `--set train.epochs=3`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory; takes precedence over FLINT_OUTPUT_DIR and `output.dir`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a bundle and write a checkpoint, per-epoch records and a summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Global relevance with MAS/AM+PI grids, or local top-3 attributes per sample.
    Interpret {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config supplying the dataset; defaults to the checkpoint's own.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "local", required_unless_present = "local")]
        global: bool,
        /// Comma-separated test-set sample ids.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        local: Option<Vec<usize>>,
        /// Relevance threshold 1/τ.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        mas_size: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        lambda_phi: Option<f64>,
        #[arg(long)]
        lambda_tv: Option<f64>,
        #[arg(long)]
        lambda_bo: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Fidelity, top-k fidelity, conciseness, shuffle test and disagreement report.
    Metrics {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Largest k for top-k fidelity.
        #[arg(long)]
        k_max: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

fn with_flags(mut set: Vec<String>, flags: &[(&str, Option<String>)]) -> Vec<String> {
    set.extend(flags.iter().filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}={v}"))));
    set
}

/// `--output`, else the environment override, else `output.dir`.
fn output_dir(config: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| config.resolved_output_dir())
}

fn execute(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Train { config, common } => {
            let cfg = RunConfig::from_file(&config, &common.set)?;
            cmd_train(&cfg, &output_dir(&cfg, common.output))
        }
        Command::Interpret {
            checkpoint,
            config,
            global,
            local,
            threshold,
            mas_size,
            iterations,
            lambda_phi,
            lambda_tv,
            lambda_bo,
            common,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let set = with_flags(
                common.set,
                &[
                    ("metrics.threshold", threshold.map(|v| v.to_string())),
                    ("metrics.mas_size", mas_size.map(|v| v.to_string())),
                    ("ampi.iterations", iterations.map(|v| v.to_string())),
                    ("ampi.lambda_phi", lambda_phi.map(|v| v.to_string())),
                    ("ampi.lambda_tv", lambda_tv.map(|v| v.to_string())),
                    ("ampi.lambda_bo", lambda_bo.map(|v| v.to_string())),
                ],
            );
            let cfg = config_for_checkpoint(&ckpt, config.as_deref(), &set)?;
            let target = match (global, local) {
                (true, _) => InterpretTarget::Global,
                (false, Some(ids)) => InterpretTarget::Local(ids),
                (false, None) => return Err(CliError::Config("pass --global or --local <ids>".into())),
            };
            cmd_interpret(&ckpt, &cfg, &target, &output_dir(&cfg, common.output))
        }
        Command::Metrics {
            checkpoint,
            config,
            k_max,
            common,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let set = with_flags(common.set, &[("metrics.top_k_max", k_max.map(|v| v.to_string()))]);
            let cfg = config_for_checkpoint(&ckpt, config.as_deref(), &set)?;
            cmd_metrics(&ckpt, &cfg, &output_dir(&cfg, common.output))
        }
    }
}

/// Machine-readable error record written to stderr.
pub fn error_record(e: &CliError) -> String {
    serde_json::json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": e.exit_code(),
    })
    .to_string()
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_record(&e));
            e.exit_code()
        }
    }
}
