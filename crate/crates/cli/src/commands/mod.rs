//! One module per subcommand. Each turns a validated [`RunConfig`] into a set of
//! staged output files; the caller commits them.

use anyhow::{Context, Result};
use qread::patterns::{load_mnist, LabeledDataset, NoiseDescriptor, Split};

use crate::config::{RunConfig, TrialsTarget};
use crate::output::{Outputs, ResultDoc, RESULT_SCHEMA_VERSION};

pub mod mnist_prepare;
pub mod multipixel;
pub mod nrf;
pub mod optimal_receiver_check;
pub mod pixel_error_sweep;
pub mod scan_classify;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    PixelErrorSweep,
    ScanClassify,
    Multipixel,
    Nrf,
    OptimalReceiverCheck,
    MnistPrepare,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::PixelErrorSweep,
        Command::ScanClassify,
        Command::Multipixel,
        Command::Nrf,
        Command::OptimalReceiverCheck,
        Command::MnistPrepare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::PixelErrorSweep => "pixel-error-sweep",
            Command::ScanClassify => "scan-classify",
            Command::Multipixel => "multipixel",
            Command::Nrf => "nrf",
            Command::OptimalReceiverCheck => "optimal-receiver-check",
            Command::MnistPrepare => "mnist-prepare",
        }
    }

    /// File stem of the command's CSV and JSON results.
    pub fn stem(self) -> String {
        self.name().replace('-', "_")
    }

    pub fn trials_target(self) -> TrialsTarget {
        match self {
            Command::PixelErrorSweep => TrialsTarget::Mc,
            Command::ScanClassify | Command::MnistPrepare => TrialsTarget::Pool,
            Command::Multipixel | Command::Nrf => TrialsTarget::Frames,
            Command::OptimalReceiverCheck => TrialsTarget::Unused,
        }
    }

    pub fn needs_mnist(self) -> bool {
        matches!(self, Command::ScanClassify | Command::Multipixel | Command::MnistPrepare)
    }
}

/// Outcome of a command.
#[derive(Debug)]
pub struct Run {
    pub outputs: Outputs,
    /// Human-readable summary for standard output.
    pub summary: String,
    /// False when the command's own check failed; outputs are still written.
    pub passed: bool,
}

/// Validates `cfg` for `cmd` and runs it.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Run> {
    cfg.validate()?;
    if cmd.needs_mnist() {
        let dir = cfg.mnist_dir();
        if !dir.is_dir() {
            anyhow::bail!(
                "MNIST directory {} not found (set data.mnist_dir or ${})",
                dir.display(),
                crate::config::DATA_DIR_ENV
            );
        }
    }
    match cmd {
        Command::PixelErrorSweep => pixel_error_sweep::run(cfg),
        Command::ScanClassify => scan_classify::run(cfg),
        Command::Multipixel => multipixel::run(cfg),
        Command::Nrf => nrf::run(cfg),
        Command::OptimalReceiverCheck => optimal_receiver_check::run(cfg),
        Command::MnistPrepare => mnist_prepare::run(cfg),
    }
}

/// Leading `subset` records of one MNIST split.
pub fn load_split(cfg: &RunConfig, split: Split, subset: Option<usize>) -> Result<LabeledDataset> {
    let dir = cfg.mnist_dir();
    let ds = load_mnist(&dir, split, cfg.data.threshold)
        .with_context(|| format!("loading MNIST from {}", dir.display()))?;
    let mut ds = match subset {
        Some(n) if n < ds.len() => ds.head(n),
        _ => ds,
    };
    ds.noise = NoiseDescriptor::clean();
    Ok(ds)
}

/// Adds `<stem>.json` with the shared envelope.
pub fn add_result_json<R: serde::Serialize>(out: &mut Outputs, cmd: Command, cfg: &RunConfig, results: R) -> Result<()> {
    let hash = cfg.hash();
    let doc = ResultDoc {
        schema_version: RESULT_SCHEMA_VERSION,
        command: cmd.name(),
        experiment: &cfg.experiment,
        config_sha256: &hash,
        seed: cfg.seed()?,
        config: cfg,
        results,
    };
    out.add_json(format!("{}.json", cmd.stem()), &doc)
}

/// `−10·log₁₀(quantum/classical)`.
pub fn advantage_db(quantum: f64, classical: f64) -> f64 {
    10.0 * (classical / quantum).log10()
}

/// Propagated standard error of [`advantage_db`] for independent estimates.
pub fn advantage_db_stderr(quantum: f64, q_se: f64, classical: f64, c_se: f64) -> f64 {
    let k = 10.0 / std::f64::consts::LN_10;
    k * ((q_se / quantum).powi(2) + (c_se / classical).powi(2)).sqrt()
}
