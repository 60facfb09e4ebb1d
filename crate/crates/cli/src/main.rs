//! `embedcal` command line.

mod config;
mod exit;
mod plots;
mod theory;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use embedcal::trainer::Mode;

use crate::config::Overrides;
use crate::exit::{usage, CliResult, PROPERTY_FAILED, USAGE};
use crate::theory::TheoryCommand;
use crate::train::{EvalArgs, TrainArgs};

/// Embedding calibration with bandit-driven data augmentation.
#[derive(Debug, Parser)]
#[command(name = "embedcal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train calibrators and write metrics, checkpoint and resolved config.
    Train(TrainCmd),
    /// Evaluate a saved checkpoint on the task's test set.
    Eval(EvalCmd),
    /// Convert metrics streams into per-run CSVs plus summary.csv.
    ExportPlots(ExportCmd),
    /// Empirical checks of the convergence analysis.
    Theory {
        /// Directory for the CSV trace.
        #[arg(long, default_value = ".", global = true)]
        out: PathBuf,
        #[command(subcommand)]
        which: TheoryCommand,
    },
}

#[derive(Debug, Args)]
struct TrainCmd {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Continue an aborted run in --out from its saved state.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    overrides: OverrideFlags,
}

#[derive(Debug, Args)]
struct OverrideFlags {
    #[arg(long)]
    seed: Option<u64>,
    /// adamab, random_aug or init_only.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    delta_n: Option<usize>,
    #[arg(long)]
    aug_rounds: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    generator_endpoint: Option<String>,
    #[arg(long)]
    generator_model: Option<String>,
    #[arg(long)]
    embedder_endpoint: Option<String>,
    #[arg(long)]
    embedder_model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[arg(long)]
    api_key_env: Option<String>,
}

impl OverrideFlags {
    fn is_empty(&self) -> bool {
        self.seed.is_none()
            && self.mode.is_none()
            && self.alpha.is_none()
            && self.delta_n.is_none()
            && self.aug_rounds.is_none()
            && self.rounds.is_none()
            && self.generator_endpoint.is_none()
            && self.generator_model.is_none()
            && self.embedder_endpoint.is_none()
            && self.embedder_model.is_none()
            && self.api_key_env.is_none()
    }

    fn into_overrides(self) -> CliResult<Overrides> {
        let mode = self.mode.map(|m| m.parse::<Mode>()).transpose()?;
        Ok(Overrides {
            seed: self.seed,
            mode,
            alpha: self.alpha,
            delta_n: self.delta_n,
            aug_rounds: self.aug_rounds,
            rounds: self.rounds,
            generator_endpoint: self.generator_endpoint,
            generator_model: self.generator_model,
            embedder_endpoint: self.embedder_endpoint,
            embedder_model: self.embedder_model,
            api_key_env: self.api_key_env,
        })
    }
}

#[derive(Debug, Args)]
struct EvalCmd {
    /// Output directory of a finished `train` run.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportCmd {
    /// metrics.jsonl files or directories searched for them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "plots")]
    out: PathBuf,
}

fn run(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::Train(t) => {
            if t.resume && !t.overrides.is_empty() {
                return Err(usage(anyhow::anyhow!("--resume cannot be combined with override flags")));
            }
            train::cmd_train(TrainArgs {
                config: t.config,
                out: t.out,
                resume: t.resume,
                overrides: t.overrides.into_overrides()?,
            })?;
            Ok(0)
        }
        Command::Eval(e) => {
            train::cmd_eval(EvalArgs {
                run: e.run,
                config: e.config,
                checkpoint: e.checkpoint,
                out: e.out,
            })?;
            Ok(0)
        }
        Command::ExportPlots(e) => {
            let n = plots::cmd_export_plots(&e.inputs, &e.out)?;
            println!("exported {n} runs to {}", e.out.display());
            Ok(0)
        }
        Command::Theory { out, which } => Ok(if theory::cmd_theory(which, &out)? { 0 } else { PROPERTY_FAILED }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
