//! `taanp`: synthetic worlds, training, evaluation and scenario runs.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use taanp::npmodel::Variant;
use taanp::training::Ablation;

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;
use crate::output::{RunDir, CONFIG_SNAPSHOT};

#[derive(Debug, Parser)]
#[command(name = "taanp", version, about = "Traffic state inference with task-aware attentive neural processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed (the world seed for `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to $TAANP_OUT/<command>, then runs/<command>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// cnp, lnp, anp or taanp.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Monte-Carlo passes at inference.
    #[arg(long, global = true)]
    k_samples: Option<usize>,
    /// full, no_tamqm, no_dropout or plain_dropout.
    #[arg(long, global = true)]
    ablation: Option<Ablation>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world and write it as a dataset.
    Synth,
    /// Train a model; writes a checkpoint, a resumable state and a log.
    Train {
        /// Continue from a saved training state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on the test period and held-out sensors.
    Eval,
    /// Sensor placement rounds without retraining.
    Place,
    /// Damage, repair and addition lifecycle without retraining.
    Resilience,
    /// Density sweep and FCD feature ablation (trains one model per point).
    Sweep,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train { .. } => "train",
            Command::Eval => "eval",
            Command::Place => "place",
            Command::Resilience => "resilience",
            Command::Sweep => "sweep",
        }
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    let name = cli.command.name();
    match (&cli.out, std::env::var_os("TAANP_OUT")) {
        (Some(dir), _) => dir.clone(),
        (None, Some(root)) => PathBuf::from(root).join(name),
        (None, None) => PathBuf::from("runs").join(name),
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let name = cli.command.name();
    let overrides = Overrides {
        seed: cli.seed,
        variant: cli.variant,
        k_samples: cli.k_samples,
        ablation: cli.ablation,
        resume: match &cli.command {
            Command::Train { resume } => resume.clone(),
            _ => None,
        },
    };
    let mut dir = RunDir::create(out_dir(cli))?;
    let resolved = RunConfig::load(cli.config.as_deref()).and_then(|c| c.resolve(name, &overrides));
    let cfg = match resolved {
        Ok(cfg) => cfg,
        Err(e) => {
            dir.finish(name, "", (0, 0, 0), Some(&e))?;
            return Err(e);
        }
    };
    let snapshot = cfg.to_toml()?;
    dir.write(CONFIG_SNAPSHOT, snapshot.as_bytes())?;
    let result = match cli.command {
        Command::Synth => commands::synth(&cfg, &mut dir),
        Command::Train { .. } => commands::train(&cfg, &mut dir),
        Command::Eval => commands::eval(&cfg, &mut dir),
        Command::Place => commands::place(&cfg, &mut dir),
        Command::Resilience => commands::resilience(&cfg, &mut dir),
        Command::Sweep => commands::sweep(&cfg, &mut dir),
    };
    let seeds = (cfg.seed, cfg.world.seed, cfg.sensor_seed);
    dir.finish(name, &snapshot, seeds, result.as_ref().err())?;
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("taanp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
