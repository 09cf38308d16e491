//! Single-shot parallel readout of a whole pattern with a spatially multimode twin beam.
//!
//! Pairs are born uniformly inside each source pixel. The signal and idler photons of a
//! pair land with independent isotropic Gaussian jitter of standard deviation
//! `σ_c = l_c/2`, so that only pixels larger than `l_c` collect both photons of most
//! pairs. Signal photons cross the pattern cell of their birth pixel. The illuminated
//! field extends past the pattern by the jitter reach, and cells outside the pattern
//! repeat the nearest edge cell, so border pixels gain as many photons from outside as
//! they lose to it. Everything is
//! simulated in signal coordinates and the idler frame is point-reflected at the end, as
//! on a camera that images the two far-field halves of the beam.
//!
//! Counts are drawn by Poisson splitting: the pairs of one source pixel that end up in a
//! given pair of landing offsets form an independent Poisson category, so a frame needs
//! one Poisson draw per category instead of one per photon.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::discriminators::{bayes_decide, BivariateNormal, DecisionRule};
use crate::error::{Error, Result};
use crate::par::{self, task_rng, SimRng};
use crate::patterns::{BinaryImage, ReadoutStrategy};
use crate::photonstats::{sample_coherent, CountPair, Priors};

/// Categories whose probability falls below this are dropped.
const CATEGORY_CUTOFF: f64 = 1e-14;

/// Quadrature points of the birth-position average.
const BIRTH_QUADRATURE: usize = 16_384;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticsParams {
    /// Object-plane size of one readout pixel, μm.
    pub pixel_pitch: f64,
    /// Signal–idler cross-correlation length at the object plane, μm.
    pub l_c: f64,
    /// Mean pairs emitted per pixel per frame.
    pub mu_px: f64,
    pub eta_s: f64,
    pub eta_i: f64,
    pub nu_s: f64,
    pub nu_i: f64,
    pub tau0: f64,
    pub tau1: f64,
}

impl OpticsParams {
    /// Parallel-readout setting of the reference experiment: 13 μm pixels, a 40 μm
    /// detector-plane correlation length reduced eightfold at the object plane.
    pub fn reference() -> Self {
        OpticsParams {
            pixel_pitch: 13.0,
            l_c: 5.0,
            mu_px: 1380.0,
            eta_s: 0.795,
            eta_i: 0.815,
            nu_s: 0.0,
            nu_i: 0.0,
            tau0: 0.987,
            tau1: 1.0,
        }
    }

    /// Jitter standard deviation in pixel units.
    pub fn sigma_px(&self) -> f64 {
        self.l_c / 2.0 / self.pixel_pitch
    }

    pub fn tau(&self, bit: u8) -> f64 {
        if bit == 0 {
            self.tau0
        } else {
            self.tau1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} must be positive, got {v}")))
            }
        };
        pos("pixel_pitch", self.pixel_pitch)?;
        pos("l_c", self.l_c)?;
        if self.sigma_px() > 8.0 {
            return Err(Error::domain("correlation length above 16 pixels is not supported"));
        }
        if !(self.mu_px.is_finite() && self.mu_px >= 0.0) {
            return Err(Error::domain(format!("mu_px must be nonnegative, got {}", self.mu_px)));
        }
        for (name, v) in [("eta_s", self.eta_s), ("eta_i", self.eta_i)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::domain(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        for (name, v) in [("nu_s", self.nu_s), ("nu_i", self.nu_i)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.tau0) || !(0.0..=1.0).contains(&self.tau1) || self.tau0 > self.tau1 {
            return Err(Error::domain(format!(
                "need 0 ≤ tau0 ≤ tau1 ≤ 1, got ({}, {})",
                self.tau0, self.tau1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Signal,
    Idler,
}

/// One camera frame of one arm, row-major. Idler frames are stored in detector
/// coordinates, point-reflected with respect to the signal frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountImage {
    pub side: usize,
    pub counts: Vec<u64>,
    pub arm: Arm,
}

impl CountImage {
    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.side + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// The frame point-reflected about its center.
    pub fn reflected(&self) -> CountImage {
        let mut counts = self.counts.clone();
        counts.reverse();
        CountImage {
            side: self.side,
            counts,
            arm: self.arm,
        }
    }

    pub fn to_grid(&self) -> Grid {
        Grid {
            side: self.side,
            values: self.counts.iter().map(|&c| c as f64).collect(),
        }
    }
}

/// Real-valued image (for example a filtered frame), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub side: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }
}

/// Landing-offset statistics of one axis, averaged over the uniform birth position.
#[derive(Debug, Clone, PartialEq)]
pub struct JitterAxis {
    /// `(ds, di, P)`: probability that the signal lands `ds` pixels and the idler `di`
    /// pixels away from the birth pixel.
    pub joint: Vec<(i32, i32, f64)>,
    /// Marginal landing offsets of a single photon.
    pub marginal: Vec<(i32, f64)>,
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

impl JitterAxis {
    fn reach_for(sigma: f64) -> i32 {
        (8.0 * sigma).ceil() as i32 + 1
    }

    /// Largest landing offset with nonzero probability, in pixels.
    pub fn reach(&self) -> i32 {
        self.marginal.iter().map(|&(o, _)| o.abs()).max().unwrap_or(0)
    }

    pub fn new(sigma: f64) -> Self {
        let reach = Self::reach_for(sigma);
        let offsets: Vec<i32> = (-reach..=reach).collect();
        let n = offsets.len();
        let mut joint = vec![0.0; n * n];
        let mut marginal = vec![0.0; n];
        let mut row = vec![0.0; n];
        let h = 1.0 / BIRTH_QUADRATURE as f64;
        for q in 0..BIRTH_QUADRATURE {
            let u = (q as f64 + 0.5) * h;
            for (j, &m) in offsets.iter().enumerate() {
                row[j] = normal_cdf((m as f64 + 1.0 - u) / sigma) - normal_cdf((m as f64 - u) / sigma);
            }
            for a in 0..n {
                marginal[a] += h * row[a];
                for b in 0..n {
                    joint[a * n + b] += h * row[a] * row[b];
                }
            }
        }
        let joint = (0..n * n)
            .filter(|&k| joint[k] > 0.0)
            .map(|k| (offsets[k / n], offsets[k % n], joint[k]))
            .collect();
        let marginal = (0..n)
            .filter(|&k| marginal[k] > 0.0)
            .map(|k| (offsets[k], marginal[k]))
            .collect();
        JitterAxis { joint, marginal }
    }

    /// Expected number of pairs, born anywhere on the line, whose two photons both land
    /// inside a run of `w` consecutive pixels; per unit pair density.
    pub fn coincidence(&self, w: usize) -> f64 {
        let w = w as i32;
        let mut c = 0.0;
        for &(ds, di, p) in &self.joint {
            // birth pixels k with k+ds and k+di both in 0..w
            let lo = (-ds).max(-di);
            let hi = (w - 1 - ds).min(w - 1 - di);
            if hi >= lo {
                c += p * (hi - lo + 1) as f64;
            }
        }
        c
    }
}

/// Source of the parallel readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Twin beam with spatially correlated pairs.
    Twin,
    /// Coherent illumination: independent Poisson counts on the two arms.
    Coherent,
}

impl From<ReadoutStrategy> for Source {
    fn from(s: ReadoutStrategy) -> Self {
        match s {
            ReadoutStrategy::Quantum => Source::Twin,
            ReadoutStrategy::Classical => Source::Coherent,
        }
    }
}

/// Precomputed frame simulator for a fixed pattern and optical setting.
#[derive(Debug, Clone)]
pub struct Acquisition {
    side: usize,
    source: Source,
    /// Both-detected categories `(dsx, dix, dsy, diy, weight)`.
    categories: Vec<(i32, i32, i32, i32, f64)>,
    /// Width of the illuminated border around the pattern.
    margin: usize,
    /// Per source pixel of the extended field, expected pairs with both photons
    /// detected (before the landing split).
    pair_rate: Vec<f64>,
    /// Per target pixel, expected single-photon counts of each arm, noise included.
    signal_only: Vec<f64>,
    idler_only: Vec<f64>,
}

impl Acquisition {
    pub fn new(pattern: &BinaryImage, optics: &OpticsParams, source: Source) -> Result<Self> {
        optics.validate()?;
        let d = pattern.side();
        let tau: Vec<f64> = (0..d * d).map(|k| optics.tau(pattern.get_index(k))).collect();
        let mu = optics.mu_px;
        match source {
            Source::Coherent => Ok(Acquisition {
                side: d,
                source,
                categories: Vec::new(),
                margin: 0,
                pair_rate: Vec::new(),
                signal_only: tau.iter().map(|t| mu * optics.eta_s * t + optics.nu_s).collect(),
                idler_only: vec![mu * optics.eta_i + optics.nu_i; d * d],
            }),
            Source::Twin => {
                let axis = JitterAxis::new(optics.sigma_px());
                let mut categories = Vec::new();
                for &(dsx, dix, px) in &axis.joint {
                    for &(dsy, diy, py) in &axis.joint {
                        let w = px * py;
                        if w >= CATEGORY_CUTOFF {
                            categories.push((dsx, dix, dsy, diy, w));
                        }
                    }
                }
                let m = axis.reach() as usize;
                let ext = d + 2 * m;
                let tau_ext: Vec<f64> = (0..ext * ext)
                    .map(|k| {
                        let r = (k / ext).saturating_sub(m).min(d - 1);
                        let c = (k % ext).saturating_sub(m).min(d - 1);
                        tau[r * d + c]
                    })
                    .collect();
                let pair_rate: Vec<f64> = tau_ext.iter().map(|t| mu * optics.eta_i * optics.eta_s * t).collect();
                let mut signal_only = vec![optics.nu_s; d * d];
                let mut idler_only = vec![optics.nu_i; d * d];
                let (di, mi) = (d as i32, m as i32);
                for r in 0..ext as i32 {
                    for c in 0..ext as i32 {
                        let t = tau_ext[(r * ext as i32 + c) as usize];
                        let s_rate = mu * optics.eta_s * t * (1.0 - optics.eta_i);
                        let i_rate = mu * (1.0 - optics.eta_s * t) * optics.eta_i;
                        for &(oy, py) in &axis.marginal {
                            for &(ox, px) in &axis.marginal {
                                let (rr, cc) = (r - mi + oy, c - mi + ox);
                                if rr < 0 || cc < 0 || rr >= di || cc >= di {
                                    continue;
                                }
                                let k = (rr * di + cc) as usize;
                                signal_only[k] += s_rate * py * px;
                                idler_only[k] += i_rate * py * px;
                            }
                        }
                    }
                }
                Ok(Acquisition {
                    side: d,
                    source,
                    categories,
                    margin: m,
                    pair_rate,
                    signal_only,
                    idler_only,
                })
            }
        }
    }

    /// One frame: signal image and idler image (the latter in detector coordinates).
    pub fn frame(&self, rng: &mut SimRng) -> (CountImage, CountImage) {
        let d = self.side;
        let mut sig: Vec<u64> = self.signal_only.iter().map(|&m| sample_coherent(rng, m)).collect();
        let mut idl: Vec<u64> = self.idler_only.iter().map(|&m| sample_coherent(rng, m)).collect();
        if self.source == Source::Twin {
            let (di, m) = (d as i32, self.margin as i32);
            let ext = di + 2 * m;
            let inside = |r: i32, c: i32| r >= 0 && c >= 0 && r < di && c < di;
            for r in 0..ext {
                for c in 0..ext {
                    let rate = self.pair_rate[(r * ext + c) as usize];
                    if rate == 0.0 {
                        continue;
                    }
                    let (r, c) = (r - m, c - m);
                    for &(dsx, dix, dsy, diy, w) in &self.categories {
                        let n = sample_coherent(rng, rate * w);
                        if n == 0 {
                            continue;
                        }
                        if inside(r + dsy, c + dsx) {
                            sig[((r + dsy) * di + c + dsx) as usize] += n;
                        }
                        if inside(r + diy, c + dix) {
                            idl[((r + diy) * di + c + dix) as usize] += n;
                        }
                    }
                }
            }
        }
        idl.reverse();
        (
            CountImage {
                side: d,
                counts: sig,
                arm: Arm::Signal,
            },
            CountImage {
                side: d,
                counts: idl,
                arm: Arm::Idler,
            },
        )
    }

    /// Expected signal counts per pixel.
    pub fn expected_signal(&self) -> Vec<f64> {
        if self.source == Source::Coherent {
            return self.signal_only.clone();
        }
        let mut out = self.signal_only.clone();
        let (di, m) = (self.side as i32, self.margin as i32);
        let ext = di + 2 * m;
        for r in 0..ext {
            for c in 0..ext {
                let rate = self.pair_rate[(r * ext + c) as usize];
                for &(dsx, _, dsy, _, w) in &self.categories {
                    let (rr, cc) = (r - m + dsy, c - m + dsx);
                    if rr >= 0 && cc >= 0 && rr < di && cc < di {
                        out[(rr * di + cc) as usize] += rate * w;
                    }
                }
            }
        }
        out
    }
}

/// Simulates one frame of `pattern`. Building an [`Acquisition`] once is cheaper when
/// many frames of the same pattern are needed.
pub fn simulate_acquisition(
    rng: &mut SimRng,
    pattern: &BinaryImage,
    optics: &OpticsParams,
    source: Source,
) -> Result<(CountImage, CountImage)> {
    Ok(Acquisition::new(pattern, optics, source)?.frame(rng))
}

/// Replaces every pixel by the mean over the in-bounds `d×d` window centered on it.
pub fn averaging_filter(img: &Grid, d: usize) -> Result<Grid> {
    if d.is_multiple_of(2) || d == 0 || d > img.side {
        return Err(Error::domain(format!(
            "window must be odd and at most {}, got {d}",
            img.side
        )));
    }
    let n = img.side;
    let h = d / 2;
    // summed-area table
    let mut sat = vec![0.0; (n + 1) * (n + 1)];
    for r in 0..n {
        for c in 0..n {
            sat[(r + 1) * (n + 1) + c + 1] =
                img.values[r * n + c] + sat[r * (n + 1) + c + 1] + sat[(r + 1) * (n + 1) + c] - sat[r * (n + 1) + c];
        }
    }
    let mut values = vec![0.0; n * n];
    for r in 0..n {
        let (r0, r1) = (r.saturating_sub(h), (r + h + 1).min(n));
        for c in 0..n {
            let (c0, c1) = (c.saturating_sub(h), (c + h + 1).min(n));
            let s = sat[r1 * (n + 1) + c1] - sat[r0 * (n + 1) + c1] - sat[r1 * (n + 1) + c0] + sat[r0 * (n + 1) + c0];
            values[r * n + c] = s / ((r1 - r0) * (c1 - c0)) as f64;
        }
    }
    Ok(Grid { side: n, values })
}

/// In-bounds extent of the window of half-width `h` centered at `i` on a line of `n`.
fn extent(i: usize, h: usize, n: usize) -> usize {
    (i + h + 1).min(n) - i.saturating_sub(h)
}

/// Decision rules for window sums, one per in-bounds window shape.
#[derive(Debug, Clone)]
pub struct WindowRules {
    d: usize,
    side: usize,
    /// Indexed by `(wy − 1)·d + (wx − 1)`; `None` for a single shape-independent rule.
    rules: Vec<DecisionRule>,
    shared: Option<DecisionRule>,
}

impl WindowRules {
    /// One rule applied to every window, typically at `d = 1`.
    pub fn uniform(rule: DecisionRule, d: usize, side: usize) -> Self {
        WindowRules {
            d,
            side,
            rules: Vec::new(),
            shared: Some(rule),
        }
    }

    /// Window-sum rules consistent with the acquisition model. For a window of `n_w`
    /// pixels of transmittance `τ`:
    ///
    /// * quantum: Gaussian rule with means `n_w(μη_Sτ + ν_s)`, `n_w(μη_I + ν_i)`,
    ///   variances equal to the means and covariance `μη_Sτη_I·C(w_x)·C(w_y)`, where
    ///   `C(w)` counts the pairs whose two photons both land in the window;
    /// * classical: Poisson likelihood threshold on the signal sum.
    pub fn for_optics(optics: &OpticsParams, strategy: ReadoutStrategy, d: usize, side: usize) -> Result<Self> {
        optics.validate()?;
        if d.is_multiple_of(2) || d == 0 || d > side {
            return Err(Error::domain(format!("window must be odd and at most {side}, got {d}")));
        }
        let axis = JitterAxis::new(optics.sigma_px());
        let mut rules = Vec::with_capacity(d * d);
        for wy in 1..=d {
            for wx in 1..=d {
                let nw = (wx * wy) as f64;
                let ms = |tau: f64| nw * (optics.mu_px * optics.eta_s * tau + optics.nu_s);
                let rule = match strategy {
                    ReadoutStrategy::Classical => poisson_threshold(ms(optics.tau0), ms(optics.tau1))?,
                    ReadoutStrategy::Quantum => {
                        let mi = nw * (optics.mu_px * optics.eta_i + optics.nu_i);
                        let cc = axis.coincidence(wx) * axis.coincidence(wy);
                        let hyp = |tau: f64| {
                            BivariateNormal::new(
                                [ms(tau), mi],
                                [ms(tau), mi],
                                optics.mu_px * optics.eta_s * tau * optics.eta_i * cc,
                            )
                        };
                        match (hyp(optics.tau0), hyp(optics.tau1)) {
                            (Ok(h0), Ok(h1)) => DecisionRule::gaussian(h0, h1),
                            _ => poisson_threshold(ms(optics.tau0), ms(optics.tau1))?,
                        }
                    }
                };
                rules.push(rule);
            }
        }
        Ok(WindowRules {
            d,
            side,
            rules,
            shared: None,
        })
    }

    pub fn window(&self) -> usize {
        self.d
    }

    fn rule(&self, wx: usize, wy: usize) -> &DecisionRule {
        match &self.shared {
            Some(r) => r,
            None => &self.rules[(wy - 1) * self.d + (wx - 1)],
        }
    }
}

fn poisson_threshold(m0: f64, m1: f64) -> Result<DecisionRule> {
    if m1 <= m0 || m0 == 0.0 {
        return DecisionRule::threshold(m0);
    }
    DecisionRule::threshold((m1 - m0) / ((m1 - m0) / m0).ln_1p())
}

/// Sums of each centered window, recovered from the window means.
fn window_sum(mean: f64, nw: usize) -> u64 {
    (mean * nw as f64).round().max(0.0) as u64
}

/// Bit per pixel from window-averaged signal and idler frames. `idl` must already be in
/// signal coordinates (see [`CountImage::reflected`]). The averages are turned back into
/// window sums, which is what the rules are calibrated on.
pub fn readout_image(sig: &Grid, idl: &Grid, rules: &WindowRules) -> Result<BinaryImage> {
    if sig.side != idl.side || sig.side != rules.side {
        return Err(Error::domain(format!(
            "frame sides differ: signal {}, idler {}, rules {}",
            sig.side, idl.side, rules.side
        )));
    }
    let n = sig.side;
    let h = rules.d / 2;
    let mut out = BinaryImage::zeros(n);
    for r in 0..n {
        let wy = extent(r, h, n);
        for c in 0..n {
            let wx = extent(c, h, n);
            let nw = wx * wy;
            let pair = CountPair {
                n_s: window_sum(sig.get(r, c), nw),
                n_i: window_sum(idl.get(r, c), nw),
            };
            let bit = bayes_decide(pair, rules.rule(wx, wy), Priors::BALANCED)?;
            out.set(r, c, bit.as_u8());
        }
    }
    Ok(out)
}

/// Filters the two frames with a `d×d` window and reads the pattern out.
pub fn read_frame(sig: &CountImage, idl: &CountImage, rules: &WindowRules) -> Result<BinaryImage> {
    let s = averaging_filter(&sig.to_grid(), rules.d)?;
    let i = averaging_filter(&idl.reflected().to_grid(), rules.d)?;
    readout_image(&s, &i, rules)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrfEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

#[derive(Clone, Copy, Default)]
struct Moments {
    sx: f64,
    sxx: f64,
    sy: f64,
}

impl Moments {
    fn add(&mut self, c: CountPair, sign: f64) {
        let x = c.n_s as f64 - c.n_i as f64;
        self.sx += sign * x;
        self.sxx += sign * x * x;
        self.sy += sign * (c.n_s + c.n_i) as f64;
    }

    fn var(&self, n: f64) -> f64 {
        (self.sxx - self.sx * self.sx / n) / (n - 1.0)
    }
}

/// `Var(n_s − n_i) / Mean(n_s + n_i)` over independent samples, with a delete-one
/// jackknife standard error.
pub fn nrf(pairs: &[CountPair]) -> Result<NrfEstimate> {
    let frames: Vec<(usize, Vec<CountPair>)> = pairs.iter().map(|&p| (0, vec![p])).collect();
    nrf_frames(&frames)
}

/// Noise reduction factor from repeated frames. Each entry is `(group, pairs)`; frames
/// of one group share their expected counts position by position (same pattern), so the
/// variance at every position is taken across the frames of its group only. The
/// estimate is `Σ Var / Σ Mean` over all positions and groups; the standard error is a
/// delete-one-frame jackknife.
pub fn nrf_frames(frames: &[(usize, Vec<CountPair>)]) -> Result<NrfEstimate> {
    if frames.len() < 2 {
        return Err(Error::domain("the noise reduction factor needs at least 2 samples"));
    }
    let width = frames[0].1.len();
    if width == 0 || frames.iter().any(|f| f.1.len() != width) {
        return Err(Error::domain("every frame must hold the same nonzero number of pairs"));
    }
    let ngroups = frames.iter().map(|f| f.0).max().unwrap() + 1;
    let mut counts = vec![0usize; ngroups];
    let mut mom = vec![Moments::default(); ngroups * width];
    for (g, pairs) in frames {
        counts[*g] += 1;
        for (j, &p) in pairs.iter().enumerate() {
            mom[g * width + j].add(p, 1.0);
        }
    }
    if counts.contains(&1) {
        return Err(Error::domain("every group needs at least 2 frames"));
    }
    let group_totals = |m: &[Moments], n: usize| -> (f64, f64) {
        if n < 2 {
            return (0.0, 0.0);
        }
        let nf = n as f64;
        let mut v = 0.0;
        let mut s = 0.0;
        for mj in m {
            v += mj.var(nf);
            s += mj.sy;
        }
        (v, s)
    };
    let mut var_g = vec![0.0; ngroups];
    let mut sum_g = vec![0.0; ngroups];
    for g in 0..ngroups {
        let (v, s) = group_totals(&mom[g * width..(g + 1) * width], counts[g]);
        var_g[g] = v;
        sum_g[g] = s;
    }
    // Σ_g Var_g / Σ_g Mean_g, where the mean of a group is over its own frames
    let estimate = |var_g: &[f64], sum_g: &[f64], counts: &[usize]| -> Option<f64> {
        let mut mean = 0.0;
        let mut var = 0.0;
        for g in 0..var_g.len() {
            if counts[g] >= 2 {
                mean += sum_g[g] / counts[g] as f64;
                var += var_g[g];
            }
        }
        if mean > 0.0 {
            Some(var / mean)
        } else {
            None
        }
    };
    let value = estimate(&var_g, &sum_g, &counts)
        .ok_or_else(|| Error::Degenerate("mean total count is zero".into()))?;

    // delete-one-frame jackknife; groups left with fewer than 2 frames drop out
    let mut reps = Vec::with_capacity(frames.len());
    let mut scratch = vec![Moments::default(); width];
    for (g, pairs) in frames {
        scratch.copy_from_slice(&mom[g * width..(g + 1) * width]);
        for (j, &p) in pairs.iter().enumerate() {
            scratch[j].add(p, -1.0);
        }
        let (v, s) = group_totals(&scratch, counts[*g] - 1);
        let (ov, os) = (var_g[*g], sum_g[*g]);
        var_g[*g] = v;
        sum_g[*g] = s;
        counts[*g] -= 1;
        if let Some(e) = estimate(&var_g, &sum_g, &counts) {
            reps.push(e);
        }
        counts[*g] += 1;
        var_g[*g] = ov;
        sum_g[*g] = os;
    }
    let m = reps.len() as f64;
    let mean_rep = reps.iter().sum::<f64>() / m;
    let stderr = ((m - 1.0) / m * reps.iter().map(|r| (r - mean_rep).powi(2)).sum::<f64>()).sqrt();
    Ok(NrfEstimate {
        value,
        stderr,
        samples: frames.len() * width,
    })
}

/// Signal/idler sums over every fully in-bounds `d×d` window, the idler frame taken in
/// signal coordinates.
pub fn window_pairs(sig: &CountImage, idl: &CountImage, d: usize) -> Vec<CountPair> {
    tiled_pairs(sig, idl, d, 1)
}

/// Signal/idler sums over non-overlapping `tile×tile` blocks.
pub fn tile_pairs(sig: &CountImage, idl: &CountImage, tile: usize) -> Vec<CountPair> {
    tiled_pairs(sig, idl, tile, tile)
}

fn tiled_pairs(sig: &CountImage, idl: &CountImage, w: usize, step: usize) -> Vec<CountPair> {
    let n = sig.side;
    let idl = idl.reflected();
    let mut out = Vec::new();
    if w == 0 || w > n {
        return out;
    }
    let mut r = 0;
    while r + w <= n {
        let mut c = 0;
        while c + w <= n {
            let mut p = CountPair::default();
            for rr in r..r + w {
                for cc in c..c + w {
                    p.n_s += sig.get(rr, cc);
                    p.n_i += idl.get(rr, cc);
                }
            }
            out.push(p);
            c += step;
        }
        r += step;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: usize,
    pub resolution_um: f64,
    pub strategy: ReadoutStrategy,
    pub pixel_error: f64,
    pub stderr: f64,
    pub nrf: f64,
    pub nrf_stderr: f64,
}

/// Result of a sweep, with every read-out frame for downstream classification.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    /// `readouts[strategy][d index][frame]`, strategies ordered quantum then classical.
    pub readouts: Vec<Vec<Vec<BinaryImage>>>,
}

/// Pixel error and noise reduction factor versus window size for both strategies.
///
/// Frame `f` images `patterns[f % patterns.len()]`; every frame is read out at every
/// window size, so differences between rows share their noise. Frame `f` of strategy
/// `s` draws from stream `2f + s` of `seed`.
pub fn resolution_sweep(
    seed: u64,
    patterns: &[BinaryImage],
    optics: &OpticsParams,
    d_grid: &[usize],
    frames: usize,
) -> Result<SweepOutput> {
    optics.validate()?;
    if patterns.is_empty() {
        return Err(Error::domain("at least one pattern is required"));
    }
    let side = patterns[0].side();
    if patterns.iter().any(|p| p.side() != side) {
        return Err(Error::domain("patterns must share their side"));
    }
    if d_grid.is_empty() || d_grid.iter().any(|&d| d % 2 == 0 || d > side) {
        return Err(Error::domain(format!("window sizes must be odd and at most {side}")));
    }
    if frames < 2 * patterns.len() {
        return Err(Error::domain("need at least two frames per pattern"));
    }
    let strategies = [ReadoutStrategy::Quantum, ReadoutStrategy::Classical];
    let mut rows = Vec::new();
    let mut readouts = Vec::new();
    for (si, &strategy) in strategies.iter().enumerate() {
        let acqs = patterns
            .iter()
            .map(|p| Acquisition::new(p, optics, strategy.into()))
            .collect::<Result<Vec<_>>>()?;
        let rules = d_grid
            .iter()
            .map(|&d| WindowRules::for_optics(optics, strategy, d, side))
            .collect::<Result<Vec<_>>>()?;
        // per frame: per d (readout, wrong bits, window pairs)
        type FrameOut = Vec<(BinaryImage, u32, Vec<CountPair>)>;
        let per_frame: Vec<Result<FrameOut>> = par::map_range(frames, |f| {
            let mut rng = task_rng(seed, 2 * f as u64 + si as u64);
            let pat = &patterns[f % patterns.len()];
            let (sig, idl) = acqs[f % patterns.len()].frame(&mut rng);
            rules
                .iter()
                .zip(d_grid)
                .map(|(r, &d)| {
                    let img = read_frame(&sig, &idl, r)?;
                    let wrong = img.hamming(pat)?;
                    Ok((img, wrong, window_pairs(&sig, &idl, d)))
                })
                .collect()
        });
        let per_frame = per_frame.into_iter().collect::<Result<Vec<_>>>()?;
        let mut strat_readouts = Vec::new();
        for (di, &d) in d_grid.iter().enumerate() {
            let errs: Vec<f64> = per_frame.iter().map(|fo| fo[di].1 as f64 / (side * side) as f64).collect();
            let n = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / n;
            let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let nrf_in: Vec<(usize, Vec<CountPair>)> = per_frame
                .iter()
                .enumerate()
                .map(|(f, fo)| (f % patterns.len(), fo[di].2.clone()))
                .collect();
            let nrf_est = nrf_frames(&nrf_in)?;
            rows.push(SweepRow {
                d,
                resolution_um: d as f64 * optics.pixel_pitch,
                strategy,
                pixel_error: mean,
                stderr: sd / n.sqrt(),
                nrf: nrf_est.value,
                nrf_stderr: nrf_est.stderr,
            });
            strat_readouts.push(per_frame.iter().map(|fo| fo[di].0.clone()).collect());
        }
        readouts.push(strat_readouts);
    }
    Ok(SweepOutput { rows, readouts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(side: usize, values: Vec<f64>) -> Grid {
        Grid { side, values }
    }

    #[test]
    fn filter_identity_constant_and_mean() {
        let g = grid(3, (1..=9).map(|v| v as f64).collect());
        assert_eq!(averaging_filter(&g, 1).unwrap(), g);
        let f = averaging_filter(&g, 3).unwrap();
        assert_relative_eq!(f.get(1, 1), 5.0, max_relative = 1e-15);
        assert_relative_eq!(f.get(0, 0), (1.0 + 2.0 + 4.0 + 5.0) / 4.0, max_relative = 1e-15);
        let c = grid(5, vec![3.5; 25]);
        let fc = averaging_filter(&c, 5).unwrap();
        assert!(fc.values.iter().all(|&v| (v - 3.5).abs() < 1e-12));
        assert!(averaging_filter(&g, 2).is_err());
    }

    #[test]
    fn jitter_tables_are_normalized() {
        for &s in &[0.001, 0.19, 1.3] {
            let a = JitterAxis::new(s);
            let tot: f64 = a.joint.iter().map(|t| t.2).sum();
            let m: f64 = a.marginal.iter().map(|t| t.1).sum();
            assert!((tot - 1.0).abs() < 1e-12);
            assert!((m - 1.0).abs() < 1e-12);
        }
        // wide windows collect nearly every pair
        let a = JitterAxis::new(0.19);
        assert!(a.coincidence(1) < 1.0);
        assert!(a.coincidence(20) / 20.0 > a.coincidence(3) / 3.0);
    }

    #[test]
    fn nrf_limits() {
        let same: Vec<CountPair> = (0..50).map(|k| CountPair::new(k, k)).collect();
        assert_eq!(nrf(&same).unwrap().value, 0.0);
        assert!(nrf(&same[..1]).is_err());
        let zeros = vec![CountPair::new(0, 0); 5];
        assert!(matches!(nrf(&zeros), Err(Error::Degenerate(_))));
    }

    #[test]
    fn reflection_round_trip() {
        let img = CountImage {
            side: 2,
            counts: vec![1, 2, 3, 4],
            arm: Arm::Idler,
        };
        assert_eq!(img.reflected().counts, vec![4, 3, 2, 1]);
        assert_eq!(img.reflected().reflected(), img);
    }

    #[test]
    fn uniform_pattern_has_uniform_expected_counts() {
        let mut optics = OpticsParams::reference();
        optics.l_c = 20.0;
        let acq = Acquisition::new(&BinaryImage::zeros(8), &optics, Source::Twin).unwrap();
        let want = optics.mu_px * optics.eta_s * optics.tau0;
        for m in acq.expected_signal() {
            assert_relative_eq!(m, want, max_relative = 1e-9);
        }
    }

    #[test]
    fn averaging_then_deciding_equals_deciding_on_sums() {
        let optics = OpticsParams::reference();
        let rules = WindowRules::for_optics(&optics, ReadoutStrategy::Quantum, 3, 6).unwrap();
        let mut rng = task_rng(5, 0);
        let pat = BinaryImage::zeros(6);
        let (sig, idl) = simulate_acquisition(&mut rng, &pat, &optics, Source::Twin).unwrap();
        let via_filter = read_frame(&sig, &idl, &rules).unwrap();
        let idl_sc = idl.reflected();
        let mut direct = BinaryImage::zeros(6);
        for r in 0..6usize {
            for c in 0..6usize {
                let mut p = CountPair::default();
                for rr in r.saturating_sub(1)..(r + 2).min(6) {
                    for cc in c.saturating_sub(1)..(c + 2).min(6) {
                        p.n_s += sig.get(rr, cc);
                        p.n_i += idl_sc.get(rr, cc);
                    }
                }
                let rule = rules.rule(extent(c, 1, 6), extent(r, 1, 6));
                direct.set(r, c, bayes_decide(p, rule, Priors::BALANCED).unwrap().as_u8());
            }
        }
        assert_eq!(via_filter, direct);
    }
}
