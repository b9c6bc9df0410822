use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mdinpaint::config::KvConfig;

mod commands;

#[derive(Parser)]
#[command(
    name = "mdinpaint",
    version,
    about = "Memory-disentangled inpainting experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus of images, label maps and masks.
    GenCorpus(Common),
    /// Simulate memory updates and reads over a synthetic corpus.
    MemSim(Common),
    /// Full forward pass with losses and metrics for every sample.
    Pipeline(Common),
    /// Evaluate the loss stack on tensors read from disk.
    Losses(Common),
    /// Generate irregular masks for one coverage band.
    MaskGen(Common),
    /// Check analytic loss gradients against central differences.
    GradCheck(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> mdinpaint::Result<KvConfig> {
        match &self.config {
            Some(p) => KvConfig::load(p),
            None => Ok(KvConfig::default()),
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (common, f): (&Common, commands::Handler) = match &cli.command {
        Command::GenCorpus(c) => (c, commands::gen_corpus),
        Command::MemSim(c) => (c, commands::mem_sim),
        Command::Pipeline(c) => (c, commands::pipeline),
        Command::Losses(c) => (c, commands::losses),
        Command::MaskGen(c) => (c, commands::mask_gen),
        Command::GradCheck(c) => (c, commands::grad_check),
    };
    let cfg = common.load()?;
    std::fs::create_dir_all(&common.out)?;
    f(&cfg, common.seed, &common.out)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<mdinpaint::Error>() {
        Some(mdinpaint::Error::Contract(_)) => 2,
        Some(mdinpaint::Error::Format { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
