//! `hieb`: train and inspect latent-space EBM priors over hierarchical
//! generators.

mod commands;
mod config;
mod error;
mod output;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Ctx, EvalSelection};
use config::RunConfig;
use error::{CliError, CliResult, Kind};

#[derive(Parser)]
#[command(name = "hieb", version, about, after_long_help = config::KEYS_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// HEBC checkpoint to resume from or evaluate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Parent of the run directory (default `runs`). `RUN_DIR` names the
    /// run directory itself.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Load checkpoints whose configuration hash differs, and reuse a
    /// non-empty `RUN_DIR`.
    #[arg(long)]
    force: bool,
    /// Log progress to stderr.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train prior, generator and inference networks.
    Train(Common),
    /// Decode prior samples drawn by Langevin dynamics.
    Sample(Common),
    /// Redraw one latent layer at a time around inferred codes.
    Hiersample(Common),
    /// Sweep single latent units of an inferred code.
    Traverse(Common),
    /// Probe, anomaly, reconstruction, MIG and energy-profile metrics.
    /// Without selection flags every applicable metric runs.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        probe: bool,
        #[arg(long)]
        anomaly: bool,
        #[arg(long)]
        recon: bool,
        #[arg(long)]
        mig: bool,
        #[arg(long)]
        energy: bool,
    },
    /// Retrain across `eval.ablate_steps` and `eval.ablate_nef`.
    Ablate(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train(c)
            | Command::Sample(c)
            | Command::Hiersample(c)
            | Command::Traverse(c)
            | Command::Ablate(c)
            | Command::Eval { common: c, .. } => c,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Sample(_) => "sample",
            Command::Hiersample(_) => "hiersample",
            Command::Traverse(_) => "traverse",
            Command::Eval { .. } => "eval",
            Command::Ablate(_) => "ablate",
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let common = cli.command.common();
    let level = if common.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).init();

    let text = std::fs::read_to_string(&common.config).map_err(|e| {
        CliError::new(Kind::Config, format!("cannot read {}: {e}", common.config.display()))
    })?;
    let base = common.config.parent().map(PathBuf::from).unwrap_or_default();
    let mut cfg = RunConfig::parse(&text, &base)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.eval.probe.seed = seed;
    }
    let dir = output::run_dir(common.out.as_deref(), cli.command.name(), common.force)?;
    log::info!("writing to {}", dir.display());
    let ctx = Ctx {
        cfg,
        config_text: text,
        checkpoint: common.checkpoint.clone(),
        force: common.force,
        dir,
    };
    match &cli.command {
        Command::Train(_) => commands::train(&ctx),
        Command::Sample(_) => commands::sample(&ctx),
        Command::Hiersample(_) => commands::hiersample(&ctx),
        Command::Traverse(_) => commands::traverse(&ctx),
        Command::Ablate(_) => commands::ablate(&ctx),
        Command::Eval { probe, anomaly, recon, mig, energy, .. } => commands::eval(
            &ctx,
            EvalSelection { probe: *probe, anomaly: *anomaly, recon: *recon, mig: *mig, energy: *energy },
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
