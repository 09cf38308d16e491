//! Run configuration: one TOML file with sections, overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qread::multipixel::OpticsParams;
use qread::photonstats::{Priors, ReadoutParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable naming the directory that holds the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "QREAD_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Free-form label copied into the JSON results.
    pub experiment: String,
    /// Root seed. Required, from the file or from `--seed`.
    pub seed: Option<u64>,
    /// Single-pixel channel. `tau0` is replaced by each entry of `grid.tau0`.
    pub readout: ReadoutParams,
    pub optics: OpticsParams,
    pub grid: GridConfig,
    pub trials: TrialConfig,
    pub data: DataConfig,
    pub knn: KnnConfig,
    /// Output directory; not part of the configuration hash.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    /// Worker threads; not part of the configuration hash.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub tau0: Vec<f64>,
    /// Odd averaging-window sizes of the parallel readout.
    pub d: Vec<usize>,
    /// `(mu, tau0, tau1)` points of the receiver check.
    pub receiver: Vec<[f64; 3]>,
    /// Side of the uniform pattern used by `nrf`.
    pub nrf_side: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    /// Monte-Carlo readouts per sweep point.
    pub mc: u64,
    /// Readouts per bit value in each bit pool.
    pub pool: usize,
    /// Camera frames of the parallel readout.
    pub frames: usize,
    /// Test digits imaged by the parallel readout.
    pub patterns: usize,
    /// Noisy copies of every test record.
    pub realizations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Falls back to `$QREAD_DATA_DIR`, then to `data/mnist`.
    pub mnist_dir: Option<PathBuf>,
    pub threshold: u8,
    /// Leading training records to use; all when absent.
    pub train_subset: Option<usize>,
    /// Leading test records to use; all when absent.
    pub test_subset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: String::new(),
            seed: None,
            // single-pixel setting of the scanning readout
            readout: ReadoutParams {
                mu: 1.45e5,
                modes: 1_000_000,
                tau0: 0.99,
                tau1: 1.0,
                eta_s: 0.79,
                eta_i: 0.791,
                nu_s: 6e3,
                nu_i: 6e3,
                priors: Priors::BALANCED,
            },
            optics: OpticsParams::reference(),
            grid: GridConfig::default(),
            trials: TrialConfig::default(),
            data: DataConfig::default(),
            knn: KnnConfig::default(),
            out: None,
            threads: None,
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            tau0: vec![0.97, 0.975, 0.98, 0.985, 0.99, 0.993, 0.995, 0.997, 0.998, 0.999],
            d: vec![1, 3, 5],
            receiver: vec![
                [0.5, 0.0, 1.0],
                [1.0, 0.0, 1.0],
                [2.0, 0.2, 0.9],
                [5.0, 0.5, 1.0],
                [10.0, 0.8, 1.0],
                [20.0, 0.9, 1.0],
                [50.0, 0.95, 1.0],
                [100.0, 0.97, 0.99],
                [200.0, 0.98, 1.0],
                [400.0, 0.99, 1.0],
                [25.0, 0.3, 0.6],
                [3.0, 0.0, 0.5],
            ],
            nrf_side: 28,
        }
    }
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            mc: 100_000,
            pool: 200_000,
            frames: 1000,
            patterns: 20,
            realizations: 1,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            mnist_dir: None,
            threshold: qread::patterns::DEFAULT_THRESHOLD,
            train_subset: None,
            test_subset: None,
        }
    }
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig { k: qread::knn::DEFAULT_K }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trials: Option<u64>,
    pub threads: Option<usize>,
}

/// What `--trials` sets for each command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialsTarget {
    Mc,
    Pool,
    Frames,
    Unused,
}

impl RunConfig {
    /// Parses a configuration file. Keys absent from the file keep their defaults, also
    /// inside partially given sections.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: toml::Table = toml::from_str(text)?;
        let mut base: toml::Table = toml::from_str(&toml::to_string(&RunConfig::default())?)?;
        merge(&mut base, file);
        Ok(base.try_into()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides, target: TrialsTarget) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(t) = o.threads {
            self.threads = Some(t);
        }
        if let Some(n) = o.trials {
            match target {
                TrialsTarget::Mc => self.trials.mc = n,
                TrialsTarget::Pool => self.trials.pool = usize::try_from(n)?,
                TrialsTarget::Frames => self.trials.frames = usize::try_from(n)?,
                TrialsTarget::Unused => bail!("--trials has no meaning for this command"),
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.context("a seed is required (config `seed` or --seed)")
    }

    /// Checks everything that does not need the data files.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.readout.validate()?;
        self.optics.validate()?;
        if self.grid.tau0.is_empty() || self.grid.d.is_empty() || self.grid.receiver.is_empty() {
            bail!("sweep grids must be nonempty");
        }
        for &t in &self.grid.tau0 {
            if !(0.0..=self.readout.tau1).contains(&t) {
                bail!("grid tau0 value {t} must lie in [0, tau1 = {}]", self.readout.tau1);
            }
        }
        for &d in &self.grid.d {
            if d % 2 == 0 || d == 0 || d > 28 {
                bail!("window sizes must be odd and at most 28, got {d}");
            }
        }
        if self.grid.nrf_side < *self.grid.d.iter().max().unwrap() {
            bail!("nrf_side must be at least the largest window");
        }
        if self.knn.k == 0 {
            bail!("k must be at least 1");
        }
        if self.trials.frames == 0 || self.trials.patterns == 0 || self.trials.pool == 0 || self.trials.realizations == 0 {
            bail!("trial counts must be positive");
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("results"))
    }

    /// Directory holding the MNIST files: config, then environment, then `data/mnist`.
    pub fn mnist_dir(&self) -> PathBuf {
        if let Some(d) = &self.data.mnist_dir {
            return d.clone();
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(d) => PathBuf::from(d),
            None => PathBuf::from("data/mnist"),
        }
    }

    /// SHA-256 of the canonical JSON form, output location and thread count excluded.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canon))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
