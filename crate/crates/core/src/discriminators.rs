//! Single-pixel bit readout: error probabilities of the classical optimal receiver,
//! classical photon counting and TMSV photon counting, and the decision rules used to
//! turn detected counts into bits.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Error, Result};
use crate::par::{self, task_rng};
use crate::photonstats::{
    poisson_pmf, sample_coherent, sample_tmsv_pair, tmsv_joint_pmf, CountPair, JointPmf, NoiseModel,
    Pmf, PoissonNoise, Priors, ReadoutParams, Truncation, M_POISSON_SWITCH,
};
use crate::special::compensated_sum;

/// Fewest trials a Monte-Carlo estimator accepts.
pub const MIN_MC_TRIALS: u64 = 1000;

/// Samples drawn by one Monte-Carlo task. Fixed so that results do not depend on the
/// number of worker threads.
pub const MC_CHUNK: u64 = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    ExactSum,
    MonteCarlo,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ClosedForm => "closed_form",
            Method::ExactSum => "exact_sum",
            Method::MonteCarlo => "monte_carlo",
        }
    }
}

/// An error probability with its statistical uncertainty (zero for exact methods).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub value: f64,
    pub stderr: f64,
    pub method: Method,
}

impl ErrorEstimate {
    pub fn exact(value: f64, method: Method) -> Self {
        debug_assert!(method != Method::MonteCarlo);
        ErrorEstimate {
            value: value.clamp(0.0, 1.0),
            stderr: 0.0,
            method,
        }
    }

    /// Prior-weighted error frequency from per-hypothesis error tallies.
    pub fn from_tallies(priors: Priors, errors: [u64; 2], trials: [u64; 2]) -> Self {
        let mut value = 0.0;
        let mut var = 0.0;
        for (h, w) in [priors.p0, priors.p1].into_iter().enumerate() {
            if trials[h] == 0 {
                continue;
            }
            let n = trials[h] as f64;
            let p = errors[h] as f64 / n;
            value += w * p;
            var += w * w * p * (1.0 - p) / n;
        }
        ErrorEstimate {
            value,
            stderr: var.sqrt(),
            method: Method::MonteCarlo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bit {
    Zero,
    One,
}

impl Bit {
    pub fn from_u8(b: u8) -> Bit {
        if b == 0 {
            Bit::Zero
        } else {
            Bit::One
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

/// Bivariate normal law over `(n_s, n_i)` with a positive-definite covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateNormal {
    pub mean: [f64; 2],
    pub var: [f64; 2],
    pub cov: f64,
    inv: [f64; 3],
    log_norm: f64,
}

impl BivariateNormal {
    pub fn new(mean: [f64; 2], var: [f64; 2], cov: f64) -> Result<Self> {
        let det = var[0] * var[1] - cov * cov;
        let finite = mean.iter().chain(var.iter()).all(|v| v.is_finite()) && cov.is_finite();
        if !finite || var[0] <= 0.0 || var[1] <= 0.0 || det <= 1e-12 * var[0] * var[1] {
            return Err(Error::Degenerate(format!(
                "covariance [[{}, {cov}], [{cov}, {}]] is not positive definite",
                var[0], var[1]
            )));
        }
        Ok(BivariateNormal {
            mean,
            var,
            cov,
            inv: [var[1] / det, -cov / det, var[0] / det],
            log_norm: -0.5 * det.ln() - std::f64::consts::LN_2 - std::f64::consts::PI.ln(),
        })
    }

    pub fn log_density(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean[0];
        let dy = y - self.mean[1];
        let q = self.inv[0] * dx * dx + 2.0 * self.inv[1] * dx * dy + self.inv[2] * dy * dy;
        self.log_norm - 0.5 * q
    }
}

/// How detected counts are mapped to a bit.
#[derive(Debug, Clone, PartialEq)]
pub enum DecisionRule {
    /// Likelihoods read from the exact joint laws under bit 0 and bit 1.
    ExactBayes { j0: Arc<JointPmf>, j1: Arc<JointPmf> },
    /// Bit 1 iff `n_s > n_th`. The idler count is ignored.
    Threshold { n_th: f64 },
    /// Sign of the Gaussian log-likelihood ratio on `(n_s, n_i)`.
    GaussianLlr { h0: BivariateNormal, h1: BivariateNormal },
}

impl DecisionRule {
    pub fn exact(j0: JointPmf, j1: JointPmf) -> Self {
        DecisionRule::ExactBayes {
            j0: Arc::new(j0),
            j1: Arc::new(j1),
        }
    }

    pub fn threshold(n_th: f64) -> Result<Self> {
        if n_th.is_nan() || n_th < 0.0 {
            return Err(Error::domain(format!("threshold must be nonnegative, got {n_th}")));
        }
        Ok(DecisionRule::Threshold { n_th })
    }

    pub fn gaussian(h0: BivariateNormal, h1: BivariateNormal) -> Self {
        DecisionRule::GaussianLlr { h0, h1 }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DecisionRule::ExactBayes { .. } => "exact_bayes",
            DecisionRule::Threshold { .. } => "threshold",
            DecisionRule::GaussianLlr { .. } => "gaussian_llr",
        }
    }
}

/// Maximum a-posteriori bit for counts `c`.
///
/// Ties go to bit 1. The threshold rule is the exception: a count exactly equal to an
/// integer threshold decides bit 0, which is the convention of the photon-counting
/// closed form (the two likelihoods are equal there, so the error is unaffected).
pub fn bayes_decide(c: CountPair, rule: &DecisionRule, priors: Priors) -> Result<Bit> {
    let bit = |one: bool| if one { Bit::One } else { Bit::Zero };
    match rule {
        DecisionRule::Threshold { n_th } => Ok(bit(c.n_s as f64 > *n_th)),
        DecisionRule::GaussianLlr { h0, h1 } => {
            let (x, y) = (c.n_s as f64, c.n_i as f64);
            let l0 = priors.p0.ln() + h0.log_density(x, y);
            let l1 = priors.p1.ln() + h1.log_density(x, y);
            Ok(bit(l1 >= l0))
        }
        DecisionRule::ExactBayes { j0, j1 } => {
            if !j0.contains(c.n_s, c.n_i) && !j1.contains(c.n_s, c.n_i) {
                return Err(Error::OutOfSupport {
                    n_s: c.n_s,
                    n_i: c.n_i,
                });
            }
            let (s, i) = (c.n_s as usize, c.n_i as usize);
            Ok(bit(priors.p1 * j1.get(s, i) >= priors.p0 * j0.get(s, i)))
        }
    }
}

fn check_taus(tau0: f64, tau1: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau0) || !(0.0..=1.0).contains(&tau1) {
        return Err(Error::domain(format!("transmittances must lie in [0, 1], got ({tau0}, {tau1})")));
    }
    if tau0 > tau1 {
        return Err(Error::domain(format!("tau0 ({tau0}) must not exceed tau1 ({tau1})")));
    }
    Ok(())
}

fn check_energy(mu: f64) -> Result<()> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::domain(format!("signal energy must be finite and nonnegative, got {mu}")));
    }
    Ok(())
}

/// Lowest error of any classical transmitter of energy `mu`:
/// `(1 − √(1 − e^{−μ(√τ₀−√τ₁)²}))/2`. Detector efficiency enters through `mu → η·mu`.
pub fn classical_lower_bound(mu: f64, tau0: f64, tau1: f64) -> Result<ErrorEstimate> {
    check_energy(mu)?;
    check_taus(tau0, tau1)?;
    let x = (-mu * (tau0.sqrt() - tau1.sqrt()).powi(2)).exp();
    // (1 − √(1−x))/2 rewritten to avoid cancellation at small x
    let value = x / (2.0 * (1.0 + (1.0 - x).sqrt()));
    Ok(ErrorEstimate::exact(value, Method::ClosedForm))
}

/// Crossing point `μ₀(τ₁−τ₀)/ln(τ₁/τ₀)` of the two Poisson likelihoods, treated as a
/// function of a continuous count.
pub fn threshold_nth(mu0: f64, tau0: f64, tau1: f64) -> Result<f64> {
    check_energy(mu0)?;
    check_taus(tau0, tau1)?;
    if tau0 == tau1 {
        return Err(Error::Degenerate(format!("tau0 = tau1 = {tau0} gives no threshold")));
    }
    if tau0 == 0.0 {
        return Ok(0.0);
    }
    Ok(mu0 * (tau1 - tau0) / ((tau1 - tau0) / tau0).ln_1p())
}

/// Poisson CDF `P(X ≤ k)` and its complement, each without cancellation.
fn poisson_cdf_pair(k: u64, lambda: f64) -> (f64, f64) {
    if lambda <= 0.0 {
        return (1.0, 0.0);
    }
    let a = k as f64 + 1.0;
    (gamma_ur(a, lambda), gamma_lr(a, lambda))
}

/// Error of a coherent transmitter with a photon-counting receiver and balanced priors:
/// bit 1 iff the count exceeds the likelihood crossing `n_th`, giving
/// `½[1 − F(⌊n_th⌋; μτ₀) + F(⌊n_th⌋; μτ₁)]` with `F` the Poisson CDF, evaluated through
/// regularized incomplete gamma functions.
pub fn pc_classical_error(mu: f64, tau0: f64, tau1: f64) -> Result<ErrorEstimate> {
    check_energy(mu)?;
    check_taus(tau0, tau1)?;
    if tau0 == tau1 || mu == 0.0 {
        return Ok(ErrorEstimate::exact(0.5, Method::ClosedForm));
    }
    let k = threshold_nth(mu, tau0, tau1)?.floor() as u64;
    let (_, upper0) = poisson_cdf_pair(k, mu * tau0);
    let (lower1, _) = poisson_cdf_pair(k, mu * tau1);
    Ok(ErrorEstimate::exact(0.5 * (upper0 + lower1), Method::ClosedForm))
}

/// Bayes error `Σ_n min(π₀ j₀(n), π₁ j₁(n))` over the union of both supports.
pub fn pc_error_from_joints(j0: &JointPmf, j1: &JointPmf, priors: Priors) -> Result<ErrorEstimate> {
    priors.validate()?;
    let s = j0.signal_range().start.min(j1.signal_range().start)..j0.signal_range().end.max(j1.signal_range().end);
    let i = j0.idler_range().start.min(j1.idler_range().start)..j0.idler_range().end.max(j1.idler_range().end);
    let total = compensated_sum(s.flat_map(|ns| {
        i.clone()
            .map(move |ni| (priors.p0 * j0.get(ns, ni)).min(priors.p1 * j1.get(ns, ni)))
    }));
    Ok(ErrorEstimate::exact(total, Method::ExactSum))
}

/// [`pc_error_from_joints`] for signal-only count laws.
pub fn pc_error_from_pmfs(p0: &Pmf, p1: &Pmf, priors: Priors) -> Result<ErrorEstimate> {
    pc_error_from_joints(&JointPmf::from_signal(p0), &JointPmf::from_signal(p1), priors)
}

/// Exact TMSV photon-counting error from the two joint count laws.
pub fn quantum_pc_error_exact(params: &ReadoutParams, truncation: Truncation) -> Result<ErrorEstimate> {
    params.validate()?;
    if params.tau0 == params.tau1 {
        return Ok(ErrorEstimate::exact(params.priors.p0.min(params.priors.p1), Method::ExactSum));
    }
    let j0 = tmsv_joint_pmf(params, params.tau0, truncation)?;
    let j1 = tmsv_joint_pmf(params, params.tau1, truncation)?;
    pc_error_from_joints(&j0, &j1, params.priors)
}

/// Exact Bayes rule backed by the two joint laws.
pub fn build_exact_rule(params: &ReadoutParams, truncation: Truncation) -> Result<DecisionRule> {
    Ok(DecisionRule::exact(
        tmsv_joint_pmf(params, params.tau0, truncation)?,
        tmsv_joint_pmf(params, params.tau1, truncation)?,
    ))
}

/// MAP threshold on the signal count under the noisy Poisson model, where the count has
/// mean `η_S τ_i μ + ν_s` under bit `i`.
pub fn classical_threshold_rule(params: &ReadoutParams) -> Result<DecisionRule> {
    params.validate()?;
    let m0 = params.eta_s * params.tau0 * params.mu + params.nu_s;
    let m1 = params.eta_s * params.tau1 * params.mu + params.nu_s;
    if m1 == m0 {
        return DecisionRule::threshold(m0);
    }
    if m0 == 0.0 {
        return DecisionRule::threshold(0.0);
    }
    let log_ratio = ((m1 - m0) / m0).ln_1p();
    let n_th = (m1 - m0 + (params.priors.p0 / params.priors.p1).ln()) / log_ratio;
    DecisionRule::threshold(n_th.max(0.0))
}

/// Gaussian surrogate of the TMSV likelihoods for large counts. Under bit `i` the counts
/// have means `(η_S τ_i μ + ν_s, η_I μ + ν_i)`, variances equal to the means and
/// covariance `η_S τ_i η_I μ`. When a covariance is not positive definite (an opaque
/// cell without noise, say) the rule falls back to [`classical_threshold_rule`].
pub fn build_gaussian_rule(params: &ReadoutParams) -> Result<DecisionRule> {
    params.validate()?;
    if params.modes <= M_POISSON_SWITCH {
        return Err(Error::domain(format!(
            "the Gaussian rule assumes more than {M_POISSON_SWITCH} modes, got {}",
            params.modes
        )));
    }
    gaussian_rule_unchecked(params)
}

pub(crate) fn gaussian_rule_unchecked(params: &ReadoutParams) -> Result<DecisionRule> {
    let hyp = |tau: f64| {
        let ms = params.eta_s * tau * params.mu + params.nu_s;
        let mi = params.eta_i * params.mu + params.nu_i;
        BivariateNormal::new([ms, mi], [ms, mi], params.eta_s * tau * params.eta_i * params.mu)
    };
    match (hyp(params.tau0), hyp(params.tau1)) {
        (Ok(h0), Ok(h1)) => Ok(DecisionRule::gaussian(h0, h1)),
        _ => classical_threshold_rule(params),
    }
}

fn check_trials(trials: u64) -> Result<()> {
    if trials < MIN_MC_TRIALS {
        return Err(Error::domain(format!(
            "Monte-Carlo estimates need at least {MIN_MC_TRIALS} trials, got {trials}"
        )));
    }
    Ok(())
}

/// Runs `trials` readouts split evenly between the two hypotheses and tallies wrong
/// bits. `draw(rng, bit)` simulates one readout of a cell holding `bit`.
fn mc_error<D>(seed: u64, trials: u64, priors: Priors, rule: &DecisionRule, draw: D) -> Result<ErrorEstimate>
where
    D: Fn(&mut par::SimRng, u8) -> CountPair + Sync + Send,
{
    let per = [trials / 2, trials - trials / 2];
    let mut tasks = Vec::new();
    for bit in 0..2u8 {
        for (idx, (_, len)) in par::chunks(per[bit as usize], MC_CHUNK).into_iter().enumerate() {
            tasks.push((bit, ((bit as u64) << 32) | idx as u64, len));
        }
    }
    let results = par::map_slice(&tasks, |&(bit, stream, len)| -> Result<u64> {
        let mut rng = task_rng(seed, stream);
        let truth = Bit::from_u8(bit);
        let mut wrong = 0;
        for _ in 0..len {
            let c = draw(&mut rng, bit);
            if bayes_decide(c, rule, priors)? != truth {
                wrong += 1;
            }
        }
        Ok(wrong)
    });
    let mut errors = [0u64; 2];
    for (&(bit, _, _), r) in tasks.iter().zip(results) {
        errors[bit as usize] += r?;
    }
    Ok(ErrorEstimate::from_tallies(priors, errors, per))
}

/// Monte-Carlo error of TMSV photon counting decided with `rule`.
pub fn quantum_pc_error_mc(seed: u64, params: &ReadoutParams, rule: &DecisionRule, trials: u64) -> Result<ErrorEstimate> {
    params.validate()?;
    check_trials(trials)?;
    let p = *params;
    mc_error(seed, trials, p.priors, rule, move |rng, bit| sample_tmsv_pair(rng, &p, p.tau(bit)))
}

/// Monte-Carlo error of a coherent transmitter of energy `μ` read by photon counting on
/// the noisy signal arm, using [`classical_threshold_rule`].
pub fn classical_pc_error_mc(seed: u64, params: &ReadoutParams, trials: u64) -> Result<ErrorEstimate> {
    params.validate()?;
    check_trials(trials)?;
    let rule = classical_threshold_rule(params)?;
    let p = *params;
    mc_error(seed, trials, p.priors, &rule, move |rng, bit| {
        let n_s = sample_coherent(rng, p.eta_s * p.tau(bit) * p.mu) + PoissonNoise.sample(rng, p.nu_s);
        CountPair { n_s, n_i: 0 }
    })
}

/// Exact error of the classical noisy photon-counting rule, from Poisson count laws.
pub fn classical_pc_error_noisy(params: &ReadoutParams) -> Result<ErrorEstimate> {
    params.validate()?;
    let m0 = params.eta_s * params.tau0 * params.mu + params.nu_s;
    let m1 = params.eta_s * params.tau1 * params.mu + params.nu_s;
    let p0 = poisson_pmf(m0, Truncation::Adaptive)?;
    let p1 = poisson_pmf(m1, Truncation::Adaptive)?;
    pc_error_from_pmfs(&p0, &p1, params.priors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lower_bound_limits() {
        assert_eq!(classical_lower_bound(3.0, 0.4, 0.4).unwrap().value, 0.5);
        assert_eq!(classical_lower_bound(0.0, 0.0, 1.0).unwrap().value, 0.5);
        let v = classical_lower_bound(1.0, 0.0, 1.0).unwrap().value;
        assert_relative_eq!(v, 0.5 * (1.0 - (1.0 - (-1.0f64).exp()).sqrt()), max_relative = 1e-14);
        assert!(classical_lower_bound(1.0, 0.9, 0.1).is_err());
    }

    #[test]
    fn threshold_values() {
        let t = threshold_nth(1.0, 0.25, 1.0).unwrap();
        assert_relative_eq!(t, 0.75 / 4f64.ln(), max_relative = 1e-14);
        assert!(matches!(threshold_nth(1.0, 0.5, 0.5), Err(Error::Degenerate(_))));
        assert_eq!(threshold_nth(1.0, 0.0, 1.0).unwrap(), 0.0);
        let near = threshold_nth(3.0, 0.5, 0.5 + 1e-9).unwrap();
        assert_relative_eq!(near, 1.5, max_relative = 1e-8);
        let a = threshold_nth(2.0, 0.3, 0.8).unwrap();
        let b = threshold_nth(4.0, 0.3, 0.8).unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-14);
    }

    #[test]
    fn classical_pc_edges() {
        assert_eq!(pc_classical_error(7.0, 0.5, 0.5).unwrap().value, 0.5);
        let v = pc_classical_error(2.0, 0.0, 1.0).unwrap().value;
        assert_relative_eq!(v, 0.5 * (-2.0f64).exp(), max_relative = 1e-13);
        let a = pc_classical_error(1.0, 0.25, 1.0).unwrap().value;
        let b = pc_classical_error(20.0, 0.25, 1.0).unwrap().value;
        assert!(b < a);
    }

    #[test]
    fn joint_error_edges() {
        let p = poisson_pmf(2.0, Truncation::Adaptive).unwrap();
        let e = pc_error_from_pmfs(&p, &p, Priors::BALANCED).unwrap();
        assert_relative_eq!(e.value, 0.5, epsilon = 1e-12);
        let a = JointPmf::point_mass(CountPair::new(0, 0));
        let b = JointPmf::point_mass(CountPair::new(5, 5));
        assert_eq!(pc_error_from_joints(&a, &b, Priors::BALANCED).unwrap().value, 0.0);
        let bad = Priors { p0: 0.3, p1: 0.3 };
        assert!(pc_error_from_joints(&a, &b, bad).is_err());
    }

    #[test]
    fn exact_bayes_decisions() {
        let rule = DecisionRule::exact(
            JointPmf::point_mass(CountPair::new(0, 0)),
            JointPmf::point_mass(CountPair::new(5, 5)),
        );
        let pr = Priors::BALANCED;
        assert_eq!(bayes_decide(CountPair::new(5, 5), &rule, pr).unwrap(), Bit::One);
        assert_eq!(bayes_decide(CountPair::new(0, 0), &rule, pr).unwrap(), Bit::Zero);
        assert!(matches!(
            bayes_decide(CountPair::new(9, 9), &rule, pr),
            Err(Error::OutOfSupport { .. })
        ));
        let same = DecisionRule::exact(
            JointPmf::point_mass(CountPair::new(1, 1)),
            JointPmf::point_mass(CountPair::new(1, 1)),
        );
        assert_eq!(bayes_decide(CountPair::new(1, 1), &same, pr).unwrap(), Bit::One);
    }

    #[test]
    fn threshold_decisions() {
        let rule = DecisionRule::threshold(threshold_nth(1.0, 0.25, 1.0).unwrap()).unwrap();
        let pr = Priors::BALANCED;
        assert_eq!(bayes_decide(CountPair::new(0, 3), &rule, pr).unwrap(), Bit::Zero);
        assert_eq!(bayes_decide(CountPair::new(1, 0), &rule, pr).unwrap(), Bit::One);
        assert!(DecisionRule::threshold(-1.0).is_err());
    }

    #[test]
    fn gaussian_covariance_at_scanning_parameters() {
        let params = ReadoutParams::new(1.45e5, 1_000_000_000, 0.99, 1.0)
            .unwrap()
            .with_efficiencies(0.79, 0.791)
            .unwrap()
            .with_noise(6e3)
            .unwrap();
        match build_gaussian_rule(&params).unwrap() {
            DecisionRule::GaussianLlr { h1, .. } => {
                assert_relative_eq!(h1.cov, 0.79 * 0.791 * 1.45e5, max_relative = 1e-12);
                assert!((h1.cov - 9.06e4).abs() < 0.01e4);
            }
            other => panic!("unexpected rule {other:?}"),
        }
    }

    #[test]
    fn gaussian_rule_falls_back_when_singular() {
        let params = ReadoutParams::new(1e3, 100_000, 0.0, 1.0).unwrap();
        assert_eq!(build_gaussian_rule(&params).unwrap().kind(), "threshold");
        let few_modes = ReadoutParams::new(1e3, 10, 0.0, 1.0).unwrap();
        assert!(build_gaussian_rule(&few_modes).is_err());
    }

    #[test]
    fn mc_rejects_few_trials() {
        let params = ReadoutParams::new(1.0, 1, 0.2, 1.0).unwrap();
        assert!(classical_pc_error_mc(1, &params, 10).is_err());
    }

    #[test]
    fn tallies_combine_with_priors() {
        let e = ErrorEstimate::from_tallies(Priors::BALANCED, [10, 30], [100, 100]);
        assert_relative_eq!(e.value, 0.2, max_relative = 1e-14);
        let var: f64 = 0.25 * (0.1 * 0.9 / 100.0 + 0.3 * 0.7 / 100.0);
        assert_relative_eq!(e.stderr, var.sqrt(), max_relative = 1e-14);
    }
}
