use std::path::PathBuf;
use std::process::ExitCode;

use attractor_cli::{commands, CliError, Overrides, RunConfig};
use attractor_core::models::ModelKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "attractor", version, about = "Mean-reverting state-space forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its latent components.
    Synth,
    /// Filter the training window and forecast one horizon.
    Forecast,
    /// Score every model variant from every forecast origin.
    Compare,
}

#[derive(Args)]
struct Flags {
    /// TOML run configuration; defaults apply when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Skip pseudo-observation updates (compare: drop reverting variants).
    #[arg(long, global = true)]
    no_reversion: bool,
    /// Use exponentially weighted attractor means with this lambda.
    #[arg(long, global = true, value_name = "X")]
    weighted_lambda: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    horizon: Option<usize>,
    /// Model kind (compare: keep only variants of this kind).
    #[arg(long, global = true, value_enum)]
    model: Option<ModelArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Linear,
    Nonlinear,
    Dlm,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Linear => ModelKind::LinearSeasonal,
            ModelArg::Nonlinear => ModelKind::NonlinearAmplitude,
            ModelArg::Dlm => ModelKind::DlmFreeform,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let model = cli.flags.model.map(ModelKind::from);
    cfg.apply(&Overrides {
        out: cli.flags.out,
        seed: cli.flags.seed,
        no_reversion: cli.flags.no_reversion,
        weighted_lambda: cli.flags.weighted_lambda,
        horizon: cli.flags.horizon,
        model,
    });
    cfg.validate()?;
    match cli.command {
        Command::Synth => commands::synth(&cfg)?,
        Command::Forecast => commands::forecast(&cfg)?,
        Command::Compare => commands::compare(&cfg, model)?,
    };
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
