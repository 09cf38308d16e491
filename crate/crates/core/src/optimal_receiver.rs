//! Truncated Fock-space construction of the optimal receiver for two coherent states
//! `|√τ₀ α⟩` and `|√τ₁ α⟩`: overlap, Helstrom error, Gram–Schmidt basis and the
//! `|±⟩` projectors that saturate the classical lower bound.
//!
//! With `s = √(1−ζ²)` and the orthonormal pair `|0⟩ = |√τ₀α⟩`,
//! `|1⟩ = (|√τ₁α⟩ − ζ|0⟩)/s`, the projectors are
//!
//! ```text
//! |+⟩ = (√(1+s)|0⟩ − √(1−s)|1⟩)/√2
//! |−⟩ = (√(1−s)|0⟩ + √(1+s)|1⟩)/√2
//! ```
//!
//! These are the eigenvectors of `Λ = ½(|√τ₀α⟩⟨√τ₀α| − |√τ₁α⟩⟨√τ₁α|)` with eigenvalues
//! `±s/2`. Outcome `+` decides bit 0.

use crate::error::{Error, Result};
use crate::photonstats::{Priors, Truncation, TRUNCATION_EPS};
use crate::special::{compensated_sum, ln_poisson};

/// Overlaps at or above `1 − ZETA_DEGENERATE` are treated as indistinguishable states.
pub const ZETA_DEGENERATE: f64 = 1e-12;

/// Real amplitudes over Fock levels `0..=nmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: Vec<f64>,
}

impl StateVector {
    pub fn from_amps(amps: Vec<f64>) -> Self {
        StateVector { amps }
    }

    pub fn amps(&self) -> &[f64] {
        &self.amps
    }

    pub fn nmax(&self) -> usize {
        self.amps.len() - 1
    }

    pub fn inner(&self, other: &StateVector) -> f64 {
        compensated_sum(self.amps.iter().zip(&other.amps).map(|(a, b)| a * b))
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// `a·self + b·other`, zero-padding the shorter vector.
    pub fn combine(&self, a: f64, other: &StateVector, b: f64) -> StateVector {
        let n = self.amps.len().max(other.amps.len());
        let get = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0);
        StateVector {
            amps: (0..n).map(|k| a * get(&self.amps, k) + b * get(&other.amps, k)).collect(),
        }
    }

    fn padded(&self, len: usize) -> StateVector {
        let mut amps = self.amps.clone();
        amps.resize(len.max(amps.len()), 0.0);
        StateVector { amps }
    }
}

/// Fock level bound that keeps the norm deficit of `|α⟩` below `1e-12`.
pub fn adaptive_nmax(alpha: f64) -> usize {
    (alpha * alpha + 10.0 * alpha + 20.0).ceil() as usize
}

/// Coherent state `|α⟩` with real `α ≥ 0`, amplitudes `e^{−α²/2} αⁿ/√n!`.
pub fn coherent_state(alpha: f64, truncation: Truncation) -> Result<StateVector> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::domain(format!("alpha must be finite and nonnegative, got {alpha}")));
    }
    let nmax = match truncation {
        Truncation::Adaptive => adaptive_nmax(alpha),
        Truncation::Fixed(n) => n,
    };
    let mean = alpha * alpha;
    let amps: Vec<f64> = (0..=nmax as u64)
        .map(|n| (0.5 * ln_poisson(n, mean)).exp())
        .collect();
    let norm2 = compensated_sum(amps.iter().map(|a| a * a));
    let deficit = 1.0 - norm2;
    if deficit > TRUNCATION_EPS {
        return Err(Error::Resource {
            what: "coherent state",
            required: adaptive_nmax(alpha) + 1,
            budget: nmax + 1,
            required_nmax: adaptive_nmax(alpha),
        });
    }
    let norm = norm2.sqrt();
    Ok(StateVector {
        amps: amps.into_iter().map(|a| a / norm).collect(),
    })
}

/// `ζ = ⟨√τ₀α|√τ₁α⟩ = e^{−(μ/2)(√τ₀−√τ₁)²}` with `μ = α²`.
pub fn overlap_zeta(mu: f64, tau0: f64, tau1: f64) -> f64 {
    (-0.5 * mu * (tau0.sqrt() - tau1.sqrt()).powi(2)).exp()
}

/// Helstrom error `(1 − √(1 − 4π₀π₁ζ²))/2` for two pure states of overlap `zeta`.
pub fn helstrom_error_pure(zeta: f64, priors: Priors) -> Result<f64> {
    priors.validate()?;
    if !(0.0..=1.0).contains(&zeta) {
        return Err(Error::domain(format!("overlap must lie in [0, 1], got {zeta}")));
    }
    let x = 4.0 * priors.p0 * priors.p1 * zeta * zeta;
    Ok(x / (2.0 * (1.0 + (1.0 - x).max(0.0).sqrt())))
}

/// Output states, their Gram–Schmidt basis and the optimal projectors.
#[derive(Debug, Clone)]
pub struct Projectors {
    /// `|√τ₀α⟩`, which is also the first basis vector.
    pub state0: StateVector,
    /// `|√τ₁α⟩`.
    pub state1: StateVector,
    /// Gram–Schmidt partner of `state0`.
    pub basis1: StateVector,
    pub plus: StateVector,
    pub minus: StateVector,
    pub zeta: f64,
}

impl Projectors {
    /// `√(1−ζ²)`, twice the positive eigenvalue of `Λ`.
    pub fn s(&self) -> f64 {
        (1.0 - self.zeta * self.zeta).sqrt()
    }
}

pub fn build_projectors(mu: f64, tau0: f64, tau1: f64, truncation: Truncation) -> Result<Projectors> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::domain(format!("mu must be finite and nonnegative, got {mu}")));
    }
    if !(0.0..=1.0).contains(&tau0) || !(0.0..=1.0).contains(&tau1) || tau0 >= tau1 {
        return Err(Error::domain(format!(
            "need 0 ≤ tau0 < tau1 ≤ 1, got ({tau0}, {tau1})"
        )));
    }
    let alpha = mu.sqrt();
    let a1 = (tau1 * mu).sqrt();
    // one common truncation, large enough for the brighter state
    let trunc = match truncation {
        Truncation::Adaptive => Truncation::Fixed(adaptive_nmax(a1)),
        t => t,
    };
    let state0 = coherent_state(tau0.sqrt() * alpha, trunc)?;
    let state1 = coherent_state(a1, trunc)?;
    let zeta = state0.inner(&state1);
    if zeta >= 1.0 - ZETA_DEGENERATE {
        return Err(Error::Degenerate(format!(
            "overlap {zeta} is numerically 1; the two states cannot be discriminated"
        )));
    }
    let s = (1.0 - zeta * zeta).sqrt();
    let basis1 = state1.combine(1.0 / s, &state0, -zeta / s);
    let (cp, cm) = (((1.0 + s) / 2.0).sqrt(), ((1.0 - s) / 2.0).sqrt());
    let plus = state0.combine(cp, &basis1, -cm);
    let minus = state0.combine(cm, &basis1, cp);
    Ok(Projectors {
        state0,
        state1,
        basis1,
        plus,
        minus,
        zeta,
    })
}

/// Error of the `|±⟩` measurement with balanced priors, deciding bit 0 on outcome `+`:
/// `½(1 − |⟨+|√τ₀α⟩|² + |⟨+|√τ₁α⟩|²)`.
pub fn receiver_error_numeric(mu: f64, tau0: f64, tau1: f64, truncation: Truncation) -> Result<f64> {
    let p = build_projectors(mu, tau0, tau1, truncation)?;
    let len = p.plus.amps.len();
    let plus = p.plus.padded(len);
    let hit0 = plus.inner(&p.state0).powi(2);
    let hit1 = plus.inner(&p.state1).powi(2);
    Ok(0.5 * (1.0 - hit0 + hit1))
}
