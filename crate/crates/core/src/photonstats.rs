//! Photon-count statistics of coherent and two-mode squeezed vacuum (TMSV) sources
//! after loss, finite detection efficiency and additive electronic noise.
//!
//! Distributions are built in log space and exponentiated once per entry. Supports are
//! truncated adaptively and the missing probability mass is kept as an explicit
//! `deficit` instead of being renormalized away.

use rand::{Rng, RngCore};
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{compensated_sum, ln_binomial, ln_negative_binomial, ln_poisson};

/// Target truncation deficit of adaptively truncated distributions.
pub const TRUNCATION_EPS: f64 = 1e-12;

/// Mode count above which the pair number is sampled as Poisson instead of
/// negative binomial.
pub const M_POISSON_SWITCH: u64 = 10_000;

/// Largest support length an adaptive truncation may grow to.
pub const DEFAULT_NMAX_BUDGET: usize = 1 << 24;

/// Largest number of cells in an exact joint table.
pub const JOINT_BUDGET: usize = 1 << 23;

/// Relative cutoff below which binomial-kernel terms are dropped.
const ROW_CUTOFF: f64 = 1e-22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Truncation {
    /// Grow the support around `mean ± (10σ + 20)` until the deficit is below
    /// [`TRUNCATION_EPS`] or the support reaches [`DEFAULT_NMAX_BUDGET`].
    Adaptive,
    /// Support `0..=nmax`.
    Fixed(usize),
}

/// A truncated photon-number distribution with support `offset..=nmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    offset: usize,
    probs: Vec<f64>,
    deficit: f64,
}

impl Pmf {
    /// Builds a pmf from explicit probabilities starting at photon number `offset`.
    pub fn from_probs(offset: usize, probs: Vec<f64>, deficit: f64) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::domain("pmf entries must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&deficit) {
            return Err(Error::domain("deficit must lie in [0, 1]"));
        }
        let mut pmf = Pmf {
            offset,
            probs,
            deficit,
        };
        pmf.trim();
        Ok(pmf)
    }

    /// Builds a pmf from probabilities and records `1 − Σ` as the deficit.
    pub fn from_probs_normalized(offset: usize, probs: Vec<f64>) -> Result<Self> {
        let mass = compensated_sum(probs.iter().copied());
        Self::from_probs(offset, probs, (1.0 - mass).clamp(0.0, 1.0))
    }

    pub fn point_mass(n: usize) -> Self {
        Pmf {
            offset: n,
            probs: vec![1.0],
            deficit: 0.0,
        }
    }

    pub fn get(&self, n: usize) -> f64 {
        if n < self.offset {
            return 0.0;
        }
        self.probs.get(n - self.offset).copied().unwrap_or(0.0)
    }

    /// First photon number in the stored support.
    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Last photon number in the stored support.
    pub fn nmax(&self) -> usize {
        self.offset + self.probs.len().saturating_sub(1)
    }

    /// Stored probabilities, entry `j` belonging to photon number `offset + j`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability mass lost to truncation.
    pub fn deficit(&self) -> f64 {
        self.deficit
    }

    pub fn mass(&self) -> f64 {
        compensated_sum(self.probs.iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(move |(j, &p)| (self.offset + j, p))
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.iter().map(|(n, p)| n as f64 * p)) / self.mass()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        compensated_sum(self.iter().map(|(n, p)| (n as f64 - m).powi(2) * p)) / self.mass()
    }

    /// Total-variation distance `½ Σ |p(n) − q(n)|` over the union of supports.
    pub fn total_variation(&self, other: &Pmf) -> f64 {
        let lo = self.offset.min(other.offset);
        let hi = self.nmax().max(other.nmax());
        0.5 * compensated_sum((lo..=hi).map(|n| (self.get(n) - other.get(n)).abs()))
    }

    /// Largest pointwise difference.
    pub fn max_abs_diff(&self, other: &Pmf) -> f64 {
        let lo = self.offset.min(other.offset);
        let hi = self.nmax().max(other.nmax());
        (lo..=hi)
            .map(|n| (self.get(n) - other.get(n)).abs())
            .fold(0.0, f64::max)
    }

    /// Distribution of the sum of two independent counts.
    pub fn convolve(&self, other: &Pmf) -> Pmf {
        let mut out = vec![0.0; self.probs.len() + other.probs.len() - 1];
        for (j, &a) in self.probs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (k, &b) in other.probs.iter().enumerate() {
                out[j + k] += a * b;
            }
        }
        let mut pmf = Pmf {
            offset: self.offset + other.offset,
            probs: out,
            deficit: combine_deficits(self.deficit, other.deficit),
        };
        pmf.trim();
        pmf
    }

    fn trim(&mut self) {
        let first = self.probs.iter().position(|&p| p > 0.0);
        match first {
            None => {
                self.probs = vec![0.0];
            }
            Some(first) => {
                let last = self.probs.iter().rposition(|&p| p > 0.0).unwrap();
                self.probs.truncate(last + 1);
                self.probs.drain(..first);
                self.offset += first;
            }
        }
    }
}

pub(crate) fn combine_deficits(a: f64, b: f64) -> f64 {
    (a + b - a * b).clamp(0.0, 1.0)
}

/// Evaluates `ln_pmf` on an adaptively grown window around `mean`.
fn build_adaptive(mean: f64, sd: f64, ln_pmf: impl Fn(u64) -> f64) -> Pmf {
    let spread = 10.0 * sd + 20.0;
    let mut lo = (mean - spread).floor().max(0.0) as usize;
    let mut hi = (mean + spread).ceil() as usize;
    loop {
        let probs: Vec<f64> = (lo..=hi).map(|n| ln_pmf(n as u64).exp()).collect();
        let mass = compensated_sum(probs.iter().copied());
        let deficit = (1.0 - mass).clamp(0.0, 1.0);
        let len = hi - lo + 1;
        if deficit <= TRUNCATION_EPS || len >= DEFAULT_NMAX_BUDGET {
            let mut pmf = Pmf {
                offset: lo,
                probs,
                deficit,
            };
            pmf.trim();
            return pmf;
        }
        let grow = (len / 2).max(16);
        hi = (hi + grow).min(lo + DEFAULT_NMAX_BUDGET - 1);
        lo = lo.saturating_sub(grow);
    }
}

fn build_fixed(nmax: usize, ln_pmf: impl Fn(u64) -> f64) -> Pmf {
    let probs: Vec<f64> = (0..=nmax).map(|n| ln_pmf(n as u64).exp()).collect();
    let mass = compensated_sum(probs.iter().copied());
    let mut pmf = Pmf {
        offset: 0,
        probs,
        deficit: (1.0 - mass).clamp(0.0, 1.0),
    };
    pmf.trim();
    pmf
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be a finite nonnegative number, got {v}")))
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// Poisson law, the photon statistics of a coherent state.
pub fn poisson_pmf(mean: f64, truncation: Truncation) -> Result<Pmf> {
    check_nonneg("Poisson mean", mean)?;
    if mean == 0.0 {
        return Ok(Pmf::point_mass(0));
    }
    let f = |n| ln_poisson(n, mean);
    Ok(match truncation {
        Truncation::Adaptive => build_adaptive(mean, mean.sqrt(), f),
        Truncation::Fixed(nmax) => build_fixed(nmax, f),
    })
}

/// Geometric (single-mode thermal) law `mu0ⁿ / (1+mu0)ⁿ⁺¹`.
pub fn thermal_pmf(mu0: f64, truncation: Truncation) -> Result<Pmf> {
    multithermal_pmf(mu0, 1, truncation)
}

/// Law of the total photon number of `modes` independent thermal modes of mean `mu0`
/// each: negative binomial with `modes` failures and mean `modes·mu0`.
pub fn multithermal_pmf(mu0: f64, modes: u64, truncation: Truncation) -> Result<Pmf> {
    check_nonneg("mean photons per mode", mu0)?;
    if modes == 0 {
        return Err(Error::domain("mode count must be at least 1"));
    }
    if mu0 == 0.0 {
        return Ok(Pmf::point_mass(0));
    }
    let size = modes as f64;
    let f = |n| ln_negative_binomial(n, size, mu0);
    Ok(match truncation {
        Truncation::Adaptive => {
            let mean = size * mu0;
            build_adaptive(mean, (mean * (1.0 + mu0)).sqrt(), f)
        }
        Truncation::Fixed(nmax) => build_fixed(nmax, f),
    })
}

/// Binomial kernel `Binom(· | n, p)` restricted to its non-negligible window.
/// Returns the first count of the window and the probabilities.
pub(crate) fn binomial_row(n: u64, p: f64) -> (u64, Vec<f64>) {
    if p <= 0.0 || n == 0 {
        return (0, vec![1.0]);
    }
    if p >= 1.0 {
        return (n, vec![1.0]);
    }
    let q = 1.0 - p;
    let mode = (((n + 1) as f64 * p).floor() as u64).min(n);
    let peak = ln_binomial(mode, n, p).exp();
    let cutoff = peak * ROW_CUTOFF;
    let ratio_up = p / q;
    let ratio_down = q / p;

    let mut below = Vec::new();
    let mut t = peak;
    let mut k = mode;
    while k > 0 {
        t *= k as f64 / (n - k + 1) as f64 * ratio_down;
        if t < cutoff {
            break;
        }
        k -= 1;
        below.push(t);
    }
    let start = mode - below.len() as u64;
    below.reverse();
    below.push(peak);
    let mut t = peak;
    let mut k = mode;
    while k < n {
        t *= (n - k) as f64 / (k + 1) as f64 * ratio_up;
        if t < cutoff {
            break;
        }
        k += 1;
        below.push(t);
    }
    (start, below)
}

/// Binomial thinning: each photon survives independently with probability `eta`.
pub fn thin(pmf: &Pmf, eta: f64) -> Result<Pmf> {
    check_unit("thinning probability", eta)?;
    if eta == 1.0 {
        return Ok(pmf.clone());
    }
    if eta == 0.0 {
        return Ok(Pmf {
            offset: 0,
            probs: vec![pmf.mass()],
            deficit: pmf.deficit,
        });
    }
    let rows: Vec<(usize, f64, u64, Vec<f64>)> = pmf
        .iter()
        .filter(|&(_, p)| p > 0.0)
        .map(|(n, p)| {
            let (start, row) = binomial_row(n as u64, eta);
            (n, p, start, row)
        })
        .collect();
    let lo = rows.iter().map(|r| r.2).min().unwrap_or(0) as usize;
    let hi = rows
        .iter()
        .map(|r| r.2 as usize + r.3.len() - 1)
        .max()
        .unwrap_or(0);
    let mut out = vec![0.0; hi - lo + 1];
    for (_, p, start, row) in &rows {
        let base = *start as usize - lo;
        for (j, &b) in row.iter().enumerate() {
            out[base + j] += p * b;
        }
    }
    let mut result = Pmf {
        offset: lo,
        probs: out,
        deficit: pmf.deficit,
    };
    result.trim();
    Ok(result)
}

/// Additive, independent electronic noise of mean `nu` per readout.
pub trait NoiseModel: Send + Sync {
    /// Distribution of signal plus noise.
    fn apply(&self, pmf: &Pmf, nu: f64) -> Result<Pmf>;
    /// One noise draw.
    fn sample(&self, rng: &mut dyn RngCore, nu: f64) -> u64;
}

/// Electronic noise modeled as Poisson counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct PoissonNoise;

impl NoiseModel for PoissonNoise {
    fn apply(&self, pmf: &Pmf, nu: f64) -> Result<Pmf> {
        check_nonneg("noise mean", nu)?;
        if nu == 0.0 {
            return Ok(pmf.clone());
        }
        Ok(pmf.convolve(&poisson_pmf(nu, Truncation::Adaptive)?))
    }

    fn sample(&self, rng: &mut dyn RngCore, nu: f64) -> u64 {
        sample_coherent(rng, nu)
    }
}

/// Convolves `pmf` with Poisson electronic noise of mean `nu`.
pub fn add_noise(pmf: &Pmf, nu: f64) -> Result<Pmf> {
    PoissonNoise.apply(pmf, nu)
}

/// Prior probabilities of the two bit values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub p0: f64,
    pub p1: f64,
}

impl Priors {
    pub const BALANCED: Priors = Priors { p0: 0.5, p1: 0.5 };

    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        let pr = Priors { p0, p1 };
        pr.validate()?;
        Ok(pr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p0 >= 0.0 && self.p1 >= 0.0 && (self.p0 + self.p1 - 1.0).abs() <= 1e-12) {
            return Err(Error::domain(format!(
                "priors must be nonnegative and sum to 1, got ({}, {})",
                self.p0, self.p1
            )));
        }
        Ok(())
    }

    pub fn swapped(&self) -> Priors {
        Priors {
            p0: self.p1,
            p1: self.p0,
        }
    }
}

impl Default for Priors {
    fn default() -> Self {
        Priors::BALANCED
    }
}

/// Channel model of a single readout pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    /// Mean signal photons per pixel, summed over all modes.
    pub mu: f64,
    /// Number of modes `M`; each carries `mu / M` photons.
    pub modes: u64,
    pub tau0: f64,
    pub tau1: f64,
    pub eta_s: f64,
    pub eta_i: f64,
    /// Mean electronic-noise counts on the signal arm.
    pub nu_s: f64,
    /// Mean electronic-noise counts on the idler arm.
    pub nu_i: f64,
    pub priors: Priors,
}

impl ReadoutParams {
    /// Lossless, noiseless pixel with balanced priors.
    pub fn new(mu: f64, modes: u64, tau0: f64, tau1: f64) -> Result<Self> {
        let p = ReadoutParams {
            mu,
            modes,
            tau0,
            tau1,
            eta_s: 1.0,
            eta_i: 1.0,
            nu_s: 0.0,
            nu_i: 0.0,
            priors: Priors::BALANCED,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_efficiencies(mut self, eta_s: f64, eta_i: f64) -> Result<Self> {
        self.eta_s = eta_s;
        self.eta_i = eta_i;
        self.validate()?;
        Ok(self)
    }

    /// Same electronic noise on both arms.
    pub fn with_noise(self, nu: f64) -> Result<Self> {
        self.with_arm_noise(nu, nu)
    }

    pub fn with_arm_noise(mut self, nu_s: f64, nu_i: f64) -> Result<Self> {
        self.nu_s = nu_s;
        self.nu_i = nu_i;
        self.validate()?;
        Ok(self)
    }

    pub fn with_priors(mut self, priors: Priors) -> Result<Self> {
        self.priors = priors;
        self.validate()?;
        Ok(self)
    }

    pub fn with_taus(mut self, tau0: f64, tau1: f64) -> Result<Self> {
        self.tau0 = tau0;
        self.tau1 = tau1;
        self.validate()?;
        Ok(self)
    }

    /// Mean photons per mode.
    pub fn mu0(&self) -> f64 {
        self.mu / self.modes as f64
    }

    pub fn tau(&self, bit: u8) -> f64 {
        if bit == 0 {
            self.tau0
        } else {
            self.tau1
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_nonneg("mu", self.mu)?;
        if self.modes == 0 {
            return Err(Error::domain("mode count must be at least 1"));
        }
        check_unit("tau0", self.tau0)?;
        check_unit("tau1", self.tau1)?;
        if self.tau0 > self.tau1 {
            return Err(Error::domain(format!(
                "tau0 ({}) must not exceed tau1 ({})",
                self.tau0, self.tau1
            )));
        }
        for (name, eta) in [("eta_s", self.eta_s), ("eta_i", self.eta_i)] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::domain(format!("{name} must lie in (0, 1], got {eta}")));
            }
        }
        check_nonneg("nu_s", self.nu_s)?;
        check_nonneg("nu_i", self.nu_i)?;
        self.priors.validate()
    }
}

/// Detected signal and idler counts of one readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct CountPair {
    pub n_s: u64,
    pub n_i: u64,
}

impl CountPair {
    pub fn new(n_s: u64, n_i: u64) -> Self {
        CountPair { n_s, n_i }
    }
}

/// Joint distribution of signal and idler counts over a rectangular support.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf {
    s_offset: usize,
    i_offset: usize,
    s_len: usize,
    i_len: usize,
    /// Row-major: signal count selects the row.
    probs: Vec<f64>,
    deficit: f64,
}

impl JointPmf {
    pub fn from_table(
        s_offset: usize,
        i_offset: usize,
        s_len: usize,
        i_len: usize,
        probs: Vec<f64>,
        deficit: f64,
    ) -> Result<Self> {
        if probs.len() != s_len * i_len || s_len == 0 || i_len == 0 {
            return Err(Error::domain("joint table dimensions do not match its data"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::domain("joint entries must be finite and nonnegative"));
        }
        Ok(JointPmf {
            s_offset,
            i_offset,
            s_len,
            i_len,
            probs,
            deficit,
        })
    }

    /// Joint law whose idler count is always zero.
    pub fn from_signal(pmf: &Pmf) -> Self {
        JointPmf {
            s_offset: pmf.offset,
            i_offset: 0,
            s_len: pmf.probs.len(),
            i_len: 1,
            probs: pmf.probs.clone(),
            deficit: pmf.deficit,
        }
    }

    /// Point mass at `c`.
    pub fn point_mass(c: CountPair) -> Self {
        JointPmf {
            s_offset: c.n_s as usize,
            i_offset: c.n_i as usize,
            s_len: 1,
            i_len: 1,
            probs: vec![1.0],
            deficit: 0.0,
        }
    }

    pub fn get(&self, n_s: usize, n_i: usize) -> f64 {
        if n_s < self.s_offset || n_i < self.i_offset {
            return 0.0;
        }
        let (s, i) = (n_s - self.s_offset, n_i - self.i_offset);
        if s >= self.s_len || i >= self.i_len {
            return 0.0;
        }
        self.probs[s * self.i_len + i]
    }

    /// Whether `(n_s, n_i)` lies inside the stored rectangle.
    pub fn contains(&self, n_s: u64, n_i: u64) -> bool {
        let (s, i) = (n_s as usize, n_i as usize);
        s >= self.s_offset
            && i >= self.i_offset
            && s < self.s_offset + self.s_len
            && i < self.i_offset + self.i_len
    }

    pub fn signal_range(&self) -> std::ops::Range<usize> {
        self.s_offset..self.s_offset + self.s_len
    }

    pub fn idler_range(&self) -> std::ops::Range<usize> {
        self.i_offset..self.i_offset + self.i_len
    }

    pub fn deficit(&self) -> f64 {
        self.deficit
    }

    pub fn mass(&self) -> f64 {
        compensated_sum(self.probs.iter().copied())
    }

    pub fn signal_marginal(&self) -> Pmf {
        let probs = (0..self.s_len)
            .map(|s| compensated_sum(self.probs[s * self.i_len..(s + 1) * self.i_len].iter().copied()))
            .collect();
        let mut pmf = Pmf {
            offset: self.s_offset,
            probs,
            deficit: self.deficit,
        };
        pmf.trim();
        pmf
    }

    pub fn idler_marginal(&self) -> Pmf {
        let mut probs = vec![0.0; self.i_len];
        for s in 0..self.s_len {
            for (i, p) in probs.iter_mut().enumerate() {
                *p += self.probs[s * self.i_len + i];
            }
        }
        let mut pmf = Pmf {
            offset: self.i_offset,
            probs,
            deficit: self.deficit,
        };
        pmf.trim();
        pmf
    }

    /// Largest pointwise difference over the union of supports.
    pub fn max_abs_diff(&self, other: &JointPmf) -> f64 {
        let s_lo = self.s_offset.min(other.s_offset);
        let s_hi = (self.s_offset + self.s_len).max(other.s_offset + other.s_len);
        let i_lo = self.i_offset.min(other.i_offset);
        let i_hi = (self.i_offset + self.i_len).max(other.i_offset + other.i_len);
        let mut m = 0.0f64;
        for s in s_lo..s_hi {
            for i in i_lo..i_hi {
                m = m.max((self.get(s, i) - other.get(s, i)).abs());
            }
        }
        m
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.probs.iter().enumerate().map(move |(k, &p)| {
            (
                self.s_offset + k / self.i_len,
                self.i_offset + k % self.i_len,
                p,
            )
        })
    }

    /// Adds independent noise to the signal axis (`signal = true`) or the idler axis.
    fn convolve_axis(&self, noise: &Pmf, signal: bool) -> JointPmf {
        let nl = noise.probs.len();
        if signal {
            let s_len = self.s_len + nl - 1;
            let mut out = vec![0.0; s_len * self.i_len];
            for s in 0..self.s_len {
                for (k, &w) in noise.probs.iter().enumerate() {
                    let dst = (s + k) * self.i_len;
                    let src = s * self.i_len;
                    for i in 0..self.i_len {
                        out[dst + i] += w * self.probs[src + i];
                    }
                }
            }
            JointPmf {
                s_offset: self.s_offset + noise.offset,
                i_offset: self.i_offset,
                s_len,
                i_len: self.i_len,
                probs: out,
                deficit: combine_deficits(self.deficit, noise.deficit),
            }
        } else {
            let i_len = self.i_len + nl - 1;
            let mut out = vec![0.0; self.s_len * i_len];
            for s in 0..self.s_len {
                for i in 0..self.i_len {
                    let p = self.probs[s * self.i_len + i];
                    if p == 0.0 {
                        continue;
                    }
                    for (k, &w) in noise.probs.iter().enumerate() {
                        out[s * i_len + i + k] += p * w;
                    }
                }
            }
            JointPmf {
                s_offset: self.s_offset,
                i_offset: self.i_offset + noise.offset,
                s_len: self.s_len,
                i_len,
                probs: out,
                deficit: combine_deficits(self.deficit, noise.deficit),
            }
        }
    }
}

fn row_span_estimate(n: f64, p: f64) -> f64 {
    2.0 * (11.0 * (n * p * (1.0 - p)).sqrt() + 10.0)
}

/// Joint signal/idler count law of an `M`-mode TMSV probe after a cell of
/// transmittance `tau`:
///
/// `p(n_S, n_I | τ) = Σ_n P_{μ₀,M}(n) · Binom(n_I | n, η_I) · Binom(n_S | n, η_S τ)`,
///
/// followed by Poisson electronic noise on each arm.
pub fn tmsv_joint_pmf(params: &ReadoutParams, tau: f64, truncation: Truncation) -> Result<JointPmf> {
    params.validate()?;
    check_unit("tau", tau)?;
    let pairs = multithermal_pmf(params.mu0(), params.modes, truncation)?;
    let eta_sig = params.eta_s * tau;
    let eta_idl = params.eta_i;

    let noise_width = |nu: f64| {
        if nu > 0.0 {
            2.0 * (10.0 * nu.sqrt() + 20.0)
        } else {
            0.0
        }
    };
    let (n_lo, n_hi) = (pairs.offset() as f64, pairs.nmax() as f64);
    let s_est = (n_hi - n_lo) * eta_sig + row_span_estimate(n_hi, eta_sig) + noise_width(params.nu_s) + 1.0;
    let i_est = (n_hi - n_lo) * eta_idl + row_span_estimate(n_hi, eta_idl) + noise_width(params.nu_i) + 1.0;
    let estimate = s_est * i_est;
    if estimate > JOINT_BUDGET as f64 {
        return Err(Error::Resource {
            what: "exact TMSV joint table",
            required: estimate.min(usize::MAX as f64) as usize,
            budget: JOINT_BUDGET,
            required_nmax: pairs.nmax(),
        });
    }

    type Row = (u64, Vec<f64>);
    let rows: Vec<(f64, Row, Row)> = pairs
        .iter()
        .filter(|&(_, p)| p > 0.0)
        .map(|(n, p)| (p, binomial_row(n as u64, eta_sig), binomial_row(n as u64, eta_idl)))
        .collect();
    let s_lo = rows.iter().map(|r| r.1 .0).min().unwrap_or(0) as usize;
    let s_hi = rows.iter().map(|r| r.1 .0 as usize + r.1 .1.len()).max().unwrap_or(1);
    let i_lo = rows.iter().map(|r| r.2 .0).min().unwrap_or(0) as usize;
    let i_hi = rows.iter().map(|r| r.2 .0 as usize + r.2 .1.len()).max().unwrap_or(1);
    let (s_len, i_len) = (s_hi - s_lo, i_hi - i_lo);

    let mut table = vec![0.0; s_len * i_len];
    for (p, (s_start, s_row), (i_start, i_row)) in &rows {
        let i_base = *i_start as usize - i_lo;
        for (js, &bs) in s_row.iter().enumerate() {
            let w = p * bs;
            let dst = (*s_start as usize - s_lo + js) * i_len + i_base;
            for (ji, &bi) in i_row.iter().enumerate() {
                table[dst + ji] += w * bi;
            }
        }
    }
    let mut joint = JointPmf {
        s_offset: s_lo,
        i_offset: i_lo,
        s_len,
        i_len,
        probs: table,
        deficit: pairs.deficit(),
    };
    if params.nu_s > 0.0 {
        joint = joint.convolve_axis(&poisson_pmf(params.nu_s, Truncation::Adaptive)?, true);
    }
    if params.nu_i > 0.0 {
        joint = joint.convolve_axis(&poisson_pmf(params.nu_i, Truncation::Adaptive)?, false);
    }
    Ok(joint)
}

/// One Poisson draw; mean 0 gives 0.
pub fn sample_coherent<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean.is_nan() || mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("finite positive Poisson mean");
    let x: f64 = d.sample(rng);
    x as u64
}

pub(crate) fn sample_binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Draws the number of emitted pairs: negative binomial through its gamma–Poisson
/// mixture, or Poisson once the mode count exceeds [`M_POISSON_SWITCH`].
pub fn sample_pair_number<R: Rng + ?Sized>(rng: &mut R, params: &ReadoutParams) -> u64 {
    if params.mu <= 0.0 {
        return 0;
    }
    if params.modes > M_POISSON_SWITCH {
        return sample_coherent(rng, params.mu);
    }
    let gamma = Gamma::new(params.modes as f64, params.mu0()).expect("valid gamma");
    let lambda: f64 = gamma.sample(rng);
    sample_coherent(rng, lambda)
}

/// Simulates one TMSV readout of a cell with transmittance `tau`. Both arms thin the
/// same pair number, which is the source of their correlation.
pub fn sample_tmsv_pair<R: Rng + ?Sized>(rng: &mut R, params: &ReadoutParams, tau: f64) -> CountPair {
    let n = sample_pair_number(rng, params);
    let n_i = sample_binomial(rng, n, params.eta_i) + sample_coherent(rng, params.nu_i);
    let n_s = sample_binomial(rng, n, params.eta_s * tau) + sample_coherent(rng, params.nu_s);
    CountPair { n_s, n_i }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::task_rng;
    use approx::assert_relative_eq;

    #[test]
    fn poisson_degenerate_and_unit_mean() {
        let p = poisson_pmf(0.0, Truncation::Adaptive).unwrap();
        assert_eq!(p.get(0), 1.0);
        assert_eq!(p.nmax(), 0);
        let p = poisson_pmf(1.0, Truncation::Adaptive).unwrap();
        let e = (-1.0f64).exp();
        assert_relative_eq!(p.get(0), e, max_relative = 1e-14);
        assert_relative_eq!(p.get(1), e, max_relative = 1e-14);
        assert!(p.deficit() <= TRUNCATION_EPS);
    }

    #[test]
    fn negative_mean_is_rejected() {
        assert!(matches!(poisson_pmf(-1.0, Truncation::Adaptive), Err(Error::Domain(_))));
        assert!(matches!(thermal_pmf(-0.1, Truncation::Adaptive), Err(Error::Domain(_))));
        assert!(matches!(multithermal_pmf(0.1, 0, Truncation::Adaptive), Err(Error::Domain(_))));
        let p = poisson_pmf(1.0, Truncation::Adaptive).unwrap();
        assert!(thin(&p, 1.5).is_err());
        assert!(add_noise(&p, -2.0).is_err());
    }

    #[test]
    fn thermal_values() {
        let p = thermal_pmf(1.0, Truncation::Adaptive).unwrap();
        assert_relative_eq!(p.get(0), 0.5, max_relative = 1e-14);
        assert_relative_eq!(p.get(1), 0.25, max_relative = 1e-14);
        assert_relative_eq!(p.get(2), 0.125, max_relative = 1e-14);
        assert!(p.deficit() <= TRUNCATION_EPS);
        let p = thermal_pmf(0.0, Truncation::Adaptive).unwrap();
        assert_eq!(p.get(0), 1.0);
        let p = thermal_pmf(0.1, Truncation::Adaptive).unwrap();
        assert!((p.mean() - 0.1).abs() < 1e-10);
    }

    #[test]
    fn fixed_truncation_records_deficit() {
        let p = poisson_pmf(3.0, Truncation::Fixed(3)).unwrap();
        let tail: f64 = (4..60).map(|n| ln_poisson(n, 3.0).exp()).sum();
        assert_relative_eq!(p.deficit(), tail, max_relative = 1e-10);
        assert_eq!(p.nmax(), 3);
    }

    #[test]
    fn thin_limits_and_identity() {
        let p = poisson_pmf(4.0, Truncation::Adaptive).unwrap();
        assert_eq!(thin(&p, 1.0).unwrap(), p);
        let z = thin(&p, 0.0).unwrap();
        assert_eq!(z.nmax(), 0);
        assert_relative_eq!(z.get(0), 1.0, epsilon = 1e-12);
        let t = thin(&p, 0.3).unwrap();
        let e = poisson_pmf(1.2, Truncation::Adaptive).unwrap();
        assert!(t.total_variation(&e) < 1e-12);
    }

    #[test]
    fn noise_identity_and_point_mass() {
        let p = poisson_pmf(4.0, Truncation::Adaptive).unwrap();
        assert_eq!(add_noise(&p, 0.0).unwrap(), p);
        let n = add_noise(&Pmf::point_mass(0), 2.0).unwrap();
        let e = poisson_pmf(2.0, Truncation::Adaptive).unwrap();
        assert!(n.max_abs_diff(&e) < 1e-15);
        let g = thermal_pmf(0.7, Truncation::Adaptive).unwrap();
        let gn = add_noise(&g, 3.0).unwrap();
        assert!((gn.mean() - (g.mean() + 3.0)).abs() < 1e-9);
    }

    #[test]
    fn lossless_tmsv_is_diagonal() {
        let params = ReadoutParams::new(0.5, 1, 0.5, 1.0).unwrap();
        let j = tmsv_joint_pmf(&params, 1.0, Truncation::Adaptive).unwrap();
        let th = thermal_pmf(0.5, Truncation::Adaptive).unwrap();
        for (s, i, p) in j.iter() {
            if s == i {
                assert_relative_eq!(p, th.get(s), max_relative = 1e-12, epsilon = 1e-300);
            } else {
                assert_eq!(p, 0.0);
            }
        }
    }

    #[test]
    fn opaque_cell_gives_empty_signal() {
        let params = ReadoutParams::new(2.0, 3, 0.0, 1.0).unwrap();
        let j = tmsv_joint_pmf(&params, 0.0, Truncation::Adaptive).unwrap();
        let s = j.signal_marginal();
        assert_eq!(s.nmax(), 0);
        assert_relative_eq!(s.get(0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn joint_budget_is_enforced() {
        let params = ReadoutParams::new(1e7, 1_000_000_000, 0.5, 1.0).unwrap();
        match tmsv_joint_pmf(&params, 1.0, Truncation::Adaptive) {
            Err(Error::Resource { required_nmax, .. }) => assert!(required_nmax > 10_000_000),
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn lossless_sampler_is_perfectly_correlated() {
        let params = ReadoutParams::new(50.0, 100, 0.5, 1.0).unwrap();
        let mut rng = task_rng(1, 0);
        for _ in 0..1000 {
            let c = sample_tmsv_pair(&mut rng, &params, 1.0);
            assert_eq!(c.n_s, c.n_i);
            let c = sample_tmsv_pair(&mut rng, &params, 0.0);
            assert_eq!(c.n_s, 0);
        }
        assert_eq!(sample_coherent(&mut rng, 0.0), 0);
    }

    #[test]
    fn priors_validation() {
        assert!(Priors::new(0.3, 0.7).is_ok());
        assert!(Priors::new(0.3, 0.6).is_err());
        assert!(ReadoutParams::new(1.0, 1, 0.9, 0.5).is_err());
    }
}
