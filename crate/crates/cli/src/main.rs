use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use qread_cli::{run, Command, Overrides, RunConfig};

/// Quantum reading and pattern-recognition simulator.
#[derive(Parser)]
#[command(name = "qread", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Single-pixel error versus τ₀ for the three readout strategies.
    PixelErrorSweep(Common),
    /// Scanning readout of MNIST digits and k-NN classification.
    ScanClassify(Common),
    /// Parallel readout at several resolutions, with classification.
    Multipixel(Common),
    /// Noise reduction factor of the parallel readout.
    Nrf(Common),
    /// Fock-space optimal receiver against the closed-form bound.
    OptimalReceiverCheck(Common),
    /// Write QRBD containers for downstream classifiers.
    MnistPrepare(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: results).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Main trial count of the command: Monte-Carlo readouts, pool size or frames.
    #[arg(long)]
    trials: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Cmd {
    fn split(&self) -> (Command, &Common) {
        match self {
            Cmd::PixelErrorSweep(c) => (Command::PixelErrorSweep, c),
            Cmd::ScanClassify(c) => (Command::ScanClassify, c),
            Cmd::Multipixel(c) => (Command::Multipixel, c),
            Cmd::Nrf(c) => (Command::Nrf, c),
            Cmd::OptimalReceiverCheck(c) => (Command::OptimalReceiverCheck, c),
            Cmd::MnistPrepare(c) => (Command::MnistPrepare, c),
        }
    }
}

fn set_threads(n: usize) -> Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("configuring the thread pool: {e}"))?;
    }
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        warn!("built without the parallel feature; --threads {n} ignored");
    }
    Ok(())
}

fn main_inner() -> Result<bool> {
    let cli = Cli::parse();
    let (cmd, common) = cli.command.split();
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(
        &Overrides {
            seed: common.seed,
            out: common.out.clone(),
            trials: common.trials,
            threads: common.threads,
        },
        cmd.trials_target(),
    )?;
    if let Some(n) = cfg.threads {
        set_threads(n)?;
    }
    info!("{} with config {}", cmd.name(), cfg.hash());
    let result = run(cmd, &cfg)?;
    let dir = cfg.out_dir();
    for path in result.outputs.commit(&dir)? {
        info!("wrote {}", path.display());
    }
    println!("{}", result.summary);
    if !result.passed {
        warn!("{} check failed", cmd.name());
    }
    Ok(result.passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match main_inner() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
