//! Binary patterns: MNIST ingestion, binarization, scanning-readout bit pools and the
//! assembly of noisy test sets.

mod idx;
mod qrbd;

pub use idx::{load_mnist, parse_idx, read_idx_file, GrayImage, IdxData, Split};
pub use qrbd::{
    decode_qrbd, encode_qrbd, read_qrbd, read_sidecar, record_len, sidecar_path, write_qrbd,
    QrbdHeader, Sidecar, QRBD_HEADER_LEN, QRBD_MAGIC, QRBD_VERSION, SIDECAR_SCHEMA_VERSION,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::discriminators::{bayes_decide, Bit, DecisionRule};
use crate::error::{Error, Result};
use crate::par::{self, task_rng};
use crate::photonstats::{sample_coherent, sample_tmsv_pair, CountPair, NoiseModel, PoissonNoise, ReadoutParams};

/// Default gray level at or above which a pixel is set.
pub const DEFAULT_THRESHOLD: u8 = 128;

/// Pools must hold at least this many bits per image cell.
pub const MIN_POOL_FACTOR: usize = 10;

/// Cap on default pool sizes.
pub const MAX_DEFAULT_POOL: usize = 1_000_000;

/// A `d×d` array of bits, packed row-major into 64-bit words (cell `k = row·d + col`
/// is bit `k % 64` of word `k / 64`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    d: usize,
    words: Vec<u64>,
}

impl BinaryImage {
    pub fn zeros(d: usize) -> Self {
        assert!(d >= 1, "image side must be at least 1");
        BinaryImage {
            d,
            words: vec![0; (d * d).div_ceil(64)],
        }
    }

    /// Builds an image from row-major cells; any nonzero value sets the bit.
    pub fn from_bits(d: usize, bits: &[u8]) -> Result<Self> {
        if d == 0 || bits.len() != d * d {
            return Err(Error::domain(format!(
                "expected {} cells for side {d}, got {}",
                d * d,
                bits.len()
            )));
        }
        let mut img = BinaryImage::zeros(d);
        for (k, &b) in bits.iter().enumerate() {
            if b != 0 {
                img.words[k >> 6] |= 1 << (k & 63);
            }
        }
        Ok(img)
    }

    pub fn side(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.d * self.d
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get_index(&self, k: usize) -> u8 {
        ((self.words[k >> 6] >> (k & 63)) & 1) as u8
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.get_index(row * self.d + col)
    }

    pub fn set_index(&mut self, k: usize, bit: u8) {
        let mask = 1u64 << (k & 63);
        if bit != 0 {
            self.words[k >> 6] |= mask;
        } else {
            self.words[k >> 6] &= !mask;
        }
    }

    pub fn set(&mut self, row: usize, col: usize, bit: u8) {
        self.set_index(row * self.d + col, bit);
    }

    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.len()).map(|k| self.get_index(k)).collect()
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        for w in &mut out.words {
            *w = !*w;
        }
        out.clear_padding();
        out
    }

    /// Number of differing cells.
    pub fn hamming(&self, other: &BinaryImage) -> Result<u32> {
        if self.d != other.d {
            return Err(Error::domain(format!(
                "image sides differ: {} vs {}",
                self.d, other.d
            )));
        }
        Ok(hamming_words(&self.words, &other.words))
    }

    fn clear_padding(&mut self) {
        let n = self.len();
        if !n.is_multiple_of(64) {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << (n % 64)) - 1;
        }
    }
}

#[inline]
pub(crate) fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// `bit = 1` iff `gray ≥ threshold`.
pub fn binarize(img: &GrayImage, threshold: u8) -> Result<BinaryImage> {
    if img.rows != img.cols {
        return Err(Error::domain(format!(
            "binary images must be square, got {}×{}",
            img.rows, img.cols
        )));
    }
    let bits: Vec<u8> = img.pixels.iter().map(|&g| (g >= threshold) as u8).collect();
    BinaryImage::from_bits(img.rows, &bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Train,
    Test,
}

/// How the images of a dataset were corrupted. The numeric codes are the ones stored in
/// QRBD headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseStrategy {
    Clean = 0,
    Flip = 1,
    QuantumPools = 2,
    ClassicalPools = 3,
    MultipixelQuantum = 4,
    MultipixelClassical = 5,
}

impl NoiseStrategy {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        use NoiseStrategy::*;
        [Clean, Flip, QuantumPools, ClassicalPools, MultipixelQuantum, MultipixelClassical]
            .into_iter()
            .find(|s| s.code() == code)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDescriptor {
    pub strategy: NoiseStrategy,
    /// Free-form generation parameters (flip probability, readout parameters, ...).
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
}

impl NoiseDescriptor {
    pub fn clean() -> Self {
        NoiseDescriptor {
            strategy: NoiseStrategy::Clean,
            parameters: serde_json::Value::Null,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Vec<BinaryImage>,
    pub labels: Vec<u8>,
    pub provenance: Provenance,
    pub noise: NoiseDescriptor,
}

impl LabeledDataset {
    pub fn new(images: Vec<BinaryImage>, labels: Vec<u8>, provenance: Provenance) -> Result<Self> {
        let ds = LabeledDataset {
            images,
            labels,
            provenance,
            noise: NoiseDescriptor::clean(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(Error::domain(format!(
                "{} images but {} labels",
                self.images.len(),
                self.labels.len()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l > 9) {
            return Err(Error::domain(format!("label {l} outside 0..9")));
        }
        if let Some(first) = self.images.first() {
            if self.images.iter().any(|im| im.side() != first.side()) {
                return Err(Error::domain("images of one dataset must share their side"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Image side, or `None` for an empty dataset.
    pub fn side(&self) -> Option<usize> {
        self.images.first().map(|im| im.side())
    }

    /// The first `n` records.
    pub fn head(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        LabeledDataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            provenance: self.provenance,
            noise: self.noise.clone(),
        }
    }

    /// Records at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<LabeledDataset> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::domain(format!("index {i} out of range for {} records", self.len())));
        }
        Ok(LabeledDataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: self.provenance,
            noise: self.noise.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutStrategy {
    /// TMSV probe, photon counting on both arms.
    Quantum,
    /// Coherent probe, photon counting on the signal arm.
    Classical,
}

impl ReadoutStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReadoutStrategy::Quantum => "quantum",
            ReadoutStrategy::Classical => "classical",
        }
    }
}

/// Decided bits of many independent readouts of cells known to hold 0 (`pool0`, size
/// `K`) and 1 (`pool1`, size `L`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitPools {
    pub pool0: Vec<u8>,
    pub pool1: Vec<u8>,
    /// Fraction of wrong bits in `pool0`.
    pub p_hat0: f64,
    /// Fraction of wrong bits in `pool1`.
    pub p_hat1: f64,
    pub strategy: ReadoutStrategy,
    pub params: ReadoutParams,
    pub seed: u64,
}

impl BitPools {
    /// Pools built from explicit bits.
    pub fn from_bits(pool0: Vec<u8>, pool1: Vec<u8>, strategy: ReadoutStrategy, params: ReadoutParams) -> Result<Self> {
        if pool0.is_empty() || pool1.is_empty() {
            return Err(Error::domain("bit pools must be nonempty"));
        }
        let p_hat0 = pool0.iter().filter(|&&b| b != 0).count() as f64 / pool0.len() as f64;
        let p_hat1 = pool1.iter().filter(|&&b| b == 0).count() as f64 / pool1.len() as f64;
        Ok(BitPools {
            pool0,
            pool1,
            p_hat0,
            p_hat1,
            strategy,
            params,
            seed: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.pool0.len()
    }

    pub fn l(&self) -> usize {
        self.pool1.len()
    }

    /// Prior-weighted pixel error of the pools.
    pub fn pooled_error(&self) -> f64 {
        self.params.priors.p0 * self.p_hat0 + self.params.priors.p1 * self.p_hat1
    }

    /// Binomial standard error of [`BitPools::pooled_error`].
    pub fn pooled_stderr(&self) -> f64 {
        let (w0, w1) = (self.params.priors.p0, self.params.priors.p1);
        (w0 * w0 * self.p_hat0 * (1.0 - self.p_hat0) / self.k() as f64
            + w1 * w1 * self.p_hat1 * (1.0 - self.p_hat1) / self.l() as f64)
            .sqrt()
    }

    pub fn pool(&self, bit: u8) -> &[u8] {
        if bit == 0 {
            &self.pool0
        } else {
            &self.pool1
        }
    }
}

/// Default pool size for assembling `n_images` images of side `d`.
pub fn default_pool_size(d: usize, n_images: usize) -> usize {
    (MIN_POOL_FACTOR * d * d * n_images.max(1)).min(MAX_DEFAULT_POOL)
}

/// Simulates `k` readouts of a τ₀ cell and `l` of a τ₁ cell and keeps the decided bits.
pub fn make_bit_pools(
    seed: u64,
    params: &ReadoutParams,
    rule: &DecisionRule,
    k: usize,
    l: usize,
    strategy: ReadoutStrategy,
) -> Result<BitPools> {
    params.validate()?;
    if k == 0 || l == 0 {
        return Err(Error::domain("pool sizes must be positive"));
    }
    let p = *params;
    let mut tasks = Vec::new();
    for (bit, n) in [(0u8, k as u64), (1u8, l as u64)] {
        for (idx, (_, len)) in par::chunks(n, crate::discriminators::MC_CHUNK).into_iter().enumerate() {
            tasks.push((bit, ((bit as u64) << 32) | idx as u64, len));
        }
    }
    let results = par::map_slice(&tasks, |&(bit, stream, len)| -> Result<Vec<u8>> {
        let mut rng = task_rng(seed, stream);
        let tau = p.tau(bit);
        (0..len)
            .map(|_| {
                let c = match strategy {
                    ReadoutStrategy::Quantum => sample_tmsv_pair(&mut rng, &p, tau),
                    ReadoutStrategy::Classical => CountPair {
                        n_s: sample_coherent(&mut rng, p.eta_s * tau * p.mu) + PoissonNoise.sample(&mut rng, p.nu_s),
                        n_i: 0,
                    },
                };
                bayes_decide(c, rule, p.priors).map(Bit::as_u8)
            })
            .collect()
    });
    let mut pools = [Vec::with_capacity(k), Vec::with_capacity(l)];
    for (&(bit, _, _), r) in tasks.iter().zip(results) {
        pools[bit as usize].extend(r?);
    }
    let [pool0, pool1] = pools;
    let mut out = BitPools::from_bits(pool0, pool1, strategy, p)?;
    out.seed = seed;
    Ok(out)
}

/// Replaces every cell holding bit `b` by a uniform draw (with replacement) from the
/// pool of readouts of `b`.
pub fn corrupt_image<R: Rng + ?Sized>(rng: &mut R, clean: &BinaryImage, pools: &BitPools) -> Result<BinaryImage> {
    if pools.pool0.is_empty() || pools.pool1.is_empty() {
        return Err(Error::domain("bit pools must be nonempty"));
    }
    let mut out = BinaryImage::zeros(clean.side());
    for k in 0..clean.len() {
        let pool = pools.pool(clean.get_index(k));
        out.set_index(k, pool[rng.random_range(0..pool.len())]);
    }
    Ok(out)
}

/// Flips each cell independently with probability `p ∈ [0, ½]`.
pub fn flip_noise<R: Rng + ?Sized>(rng: &mut R, clean: &BinaryImage, p: f64) -> Result<BinaryImage> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::domain(format!("flip probability must lie in [0, 0.5], got {p}")));
    }
    let mut out = clean.clone();
    if p == 0.0 {
        return Ok(out);
    }
    for k in 0..clean.len() {
        if rng.random_bool(p) {
            out.set_index(k, 1 - clean.get_index(k));
        }
    }
    Ok(out)
}

/// Noise applied by [`build_noisy_dataset`].
#[derive(Debug, Clone, Copy)]
pub enum ImageNoise<'a> {
    Flip(f64),
    Pools(&'a BitPools),
}

impl ImageNoise<'_> {
    fn descriptor(&self, seed: u64) -> NoiseDescriptor {
        match self {
            ImageNoise::Flip(p) => NoiseDescriptor {
                strategy: if *p == 0.0 { NoiseStrategy::Clean } else { NoiseStrategy::Flip },
                parameters: serde_json::json!({ "p": p }),
                seed: Some(seed),
            },
            ImageNoise::Pools(pools) => NoiseDescriptor {
                strategy: match pools.strategy {
                    ReadoutStrategy::Quantum => NoiseStrategy::QuantumPools,
                    ReadoutStrategy::Classical => NoiseStrategy::ClassicalPools,
                },
                parameters: serde_json::json!({
                    "readout": pools.params,
                    "k": pools.k(),
                    "l": pools.l(),
                    "p_hat0": pools.p_hat0,
                    "p_hat1": pools.p_hat1,
                    "pool_seed": pools.seed,
                }),
                seed: Some(seed),
            },
        }
    }
}

/// Noisy copy of the first `subset` records (all when `None`), each record repeated
/// `realizations` times with independent noise. Record `j` of the output draws from
/// stream `j` of `seed`, so the result does not depend on the thread count.
pub fn build_noisy_dataset(
    seed: u64,
    base: &LabeledDataset,
    noise: ImageNoise<'_>,
    subset: Option<usize>,
    realizations: usize,
) -> Result<LabeledDataset> {
    let n = subset.unwrap_or(base.len());
    if n > base.len() {
        return Err(Error::domain(format!(
            "subset of {n} requested from {} records",
            base.len()
        )));
    }
    if realizations == 0 {
        return Err(Error::domain("at least one noise realization is required"));
    }
    if let (ImageNoise::Pools(pools), Some(d)) = (noise, base.side()) {
        let need = MIN_POOL_FACTOR * d * d;
        if pools.k() < need || pools.l() < need {
            return Err(Error::domain(format!(
                "pools of sizes ({}, {}) are too small for {d}×{d} images; need at least {need} each",
                pools.k(),
                pools.l()
            )));
        }
    }
    if let ImageNoise::Flip(p) = noise {
        if !(0.0..=0.5).contains(&p) {
            return Err(Error::domain(format!("flip probability must lie in [0, 0.5], got {p}")));
        }
    }
    let total = n * realizations;
    let images = par::map_range(total, |j| {
        let src = &base.images[j / realizations];
        let mut rng = task_rng(seed, j as u64);
        match noise {
            ImageNoise::Flip(p) => flip_noise(&mut rng, src, p),
            ImageNoise::Pools(pools) => corrupt_image(&mut rng, src, pools),
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let labels = (0..total).map(|j| base.labels[j / realizations]).collect();
    Ok(LabeledDataset {
        images,
        labels,
        provenance: base.provenance,
        noise: noise.descriptor(seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photonstats::ReadoutParams;

    fn checker(d: usize) -> BinaryImage {
        let bits: Vec<u8> = (0..d * d).map(|k| ((k / d + k % d) % 2) as u8).collect();
        BinaryImage::from_bits(d, &bits).unwrap()
    }

    #[test]
    fn packing_round_trip() {
        let img = checker(28);
        assert_eq!(img.words().len(), 13);
        assert_eq!(BinaryImage::from_bits(28, &img.to_bits()).unwrap(), img);
        assert_eq!(img.count_ones(), 392);
        assert_eq!(img.complement().count_ones(), 392);
        assert_eq!(img.hamming(&img.complement()).unwrap(), 784);
        assert!(img.hamming(&BinaryImage::zeros(3)).is_err());
    }

    #[test]
    fn binarize_rule() {
        let zeros = GrayImage::new(28, 28, vec![0; 784]).unwrap();
        assert_eq!(binarize(&zeros, DEFAULT_THRESHOLD).unwrap().count_ones(), 0);
        let full = GrayImage::new(28, 28, vec![255; 784]).unwrap();
        assert_eq!(binarize(&full, DEFAULT_THRESHOLD).unwrap().count_ones(), 784);
        let edge = GrayImage::new(1, 1, vec![128]).unwrap();
        assert_eq!(binarize(&edge, 128).unwrap().get(0, 0), 1);
        let below = GrayImage::new(1, 1, vec![127]).unwrap();
        assert_eq!(binarize(&below, 128).unwrap().get(0, 0), 0);
    }

    #[test]
    fn strategy_codes_round_trip() {
        for c in 0..6 {
            assert_eq!(NoiseStrategy::from_code(c).unwrap().code(), c);
        }
        assert!(NoiseStrategy::from_code(6).is_none());
    }

    #[test]
    fn perfect_pools_leave_images_unchanged() {
        let params = ReadoutParams::new(1.0, 1, 0.0, 1.0).unwrap();
        let pools = BitPools::from_bits(vec![0; 10], vec![1; 10], ReadoutStrategy::Quantum, params).unwrap();
        let img = checker(5);
        let mut rng = task_rng(3, 0);
        assert_eq!(corrupt_image(&mut rng, &img, &pools).unwrap(), img);
        assert!(BitPools::from_bits(vec![], vec![1], ReadoutStrategy::Quantum, params).is_err());
    }

    #[test]
    fn flip_identity_and_range() {
        let img = checker(6);
        let mut rng = task_rng(1, 1);
        assert_eq!(flip_noise(&mut rng, &img, 0.0).unwrap(), img);
        assert!(flip_noise(&mut rng, &img, 0.6).is_err());
    }

    #[test]
    fn noisy_dataset_replication_and_determinism() {
        let base = LabeledDataset::new((0..10).map(|_| checker(4)).collect(), (0..10).collect(), Provenance::Test).unwrap();
        let a = build_noisy_dataset(9, &base, ImageNoise::Flip(0.2), None, 100).unwrap();
        assert_eq!(a.len(), 1000);
        assert!((0..10).all(|c| a.labels.iter().filter(|&&l| l == c).count() == 100));
        let b = build_noisy_dataset(9, &base, ImageNoise::Flip(0.2), None, 100).unwrap();
        assert_eq!(a, b);
        let clean = build_noisy_dataset(1, &base, ImageNoise::Flip(0.0), Some(3), 1).unwrap();
        assert_eq!(clean.images, base.head(3).images);
        assert!(build_noisy_dataset(1, &base, ImageNoise::Flip(0.1), Some(11), 1).is_err());
    }

    #[test]
    fn small_pools_are_rejected() {
        let params = ReadoutParams::new(1.0, 1, 0.0, 1.0).unwrap();
        let pools = BitPools::from_bits(vec![0; 10], vec![1; 10], ReadoutStrategy::Quantum, params).unwrap();
        let base = LabeledDataset::new(vec![checker(4)], vec![1], Provenance::Test).unwrap();
        assert!(build_noisy_dataset(1, &base, ImageNoise::Pools(&pools), None, 1).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(LabeledDataset::new(vec![checker(2)], vec![10], Provenance::Train).is_err());
        assert!(LabeledDataset::new(vec![checker(2)], vec![], Provenance::Train).is_err());
        assert!(LabeledDataset::new(vec![checker(2), checker(3)], vec![1, 2], Provenance::Train).is_err());
    }
}
