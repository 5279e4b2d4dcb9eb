use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hydroscen::cli::{cmd_generate, cmd_report, cmd_synth, cmd_train};
use hydroscen::config::RunConfig;

/// Probabilistic river-discharge scenario generator.
#[derive(Parser)]
#[command(name = "hydroscen", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with known ground truth
    Synth(CommonArgs),
    /// Train a model and write a checkpoint
    Train(CommonArgs),
    /// Sample ensemble-conditioned discharge scenarios
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Skip the serial-correlation reordering step
        #[arg(long)]
        no_reorder: bool,
    },
    /// Emit coverage, inflow-energy, and band reports
    Report(CommonArgs),
}

fn run() -> hydroscen::Result<()> {
    let cli = Cli::parse();
    let (common, action): (&CommonArgs, Box<dyn FnOnce(&RunConfig) -> hydroscen::Result<()>>) =
        match &cli.cmd {
            Cmd::Synth(c) => (c, Box::new(cmd_synth)),
            Cmd::Train(c) => (c, Box::new(cmd_train)),
            Cmd::Generate { common, no_reorder } => {
                let reorder = !*no_reorder;
                (common, Box::new(move |cfg| cmd_generate(cfg, reorder)))
            }
            Cmd::Report(c) => (c, Box::new(cmd_report)),
        };
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    action(&cfg)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
