use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::complex_gaussian;

/// Logits are clamped to this magnitude before the sigmoid. Close to the
/// largest argument `exp` can take, so beliefs keep their resolution near 0
/// and H0 statistics do not tie at the clamp floor.
pub const LOGIT_CLAMP: f64 = 700.0;

/// Primary-user activity hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Channel idle.
    H0,
    /// Primary user present.
    H1,
}

/// Energy-detector observation model: `J` complex samples, noise variance
/// `sigma2`, signal-to-noise ratio `snr` (linear).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlrModel {
    pub samples: usize,
    pub snr: f64,
    pub sigma2: f64,
}

impl LlrModel {
    pub fn llr(&self, energy: f64) -> f64 {
        llr(energy, self.samples, self.snr, self.sigma2)
    }

    pub fn observe<R: Rng + ?Sized>(&self, hypothesis: Hypothesis, rng: &mut R) -> f64 {
        energy_statistic(hypothesis, self.samples, self.snr, self.sigma2, rng)
    }
}

/// `Σ_j |y_j|²` over `j` samples, `y_j ~ CN(0, σ²)` under H0 and
/// `CN(0, σ²(1 + snr))` under H1.
pub fn energy_statistic<R: Rng + ?Sized>(
    hypothesis: Hypothesis,
    samples: usize,
    snr_linear: f64,
    sigma2: f64,
    rng: &mut R,
) -> f64 {
    let var = match hypothesis {
        Hypothesis::H0 => sigma2,
        Hypothesis::H1 => sigma2 * (1.0 + snr_linear),
    };
    (0..samples)
        .map(|_| complex_gaussian(rng, var).norm_sqr())
        .sum()
}

/// Exact log-likelihood ratio of the energy statistic under the Gaussian
/// signal model: `−J ln(1+γ) + E γ / (σ²(1+γ))`.
pub fn llr(energy: f64, samples: usize, snr_linear: f64, sigma2: f64) -> f64 {
    -(samples as f64) * snr_linear.ln_1p() + energy * snr_linear / (sigma2 * (1.0 + snr_linear))
}

pub fn sigmoid(psi: f64) -> f64 {
    let psi = psi.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    1.0 / (1.0 + (-psi).exp())
}

pub fn logit(pi: f64) -> f64 {
    (pi / (1.0 - pi)).ln()
}

/// H1 iff `fused >= tau`.
pub fn decide(fused: f64, tau: f64) -> Hypothesis {
    if fused >= tau {
        Hypothesis::H1
    } else {
        Hypothesis::H0
    }
}

/// One step of the two-state PU activity chain (`true` = active).
pub fn pu_markov_step<R: Rng + ?Sized>(active: bool, p01: f64, p10: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    if active {
        u >= p10
    } else {
        u < p01
    }
}
