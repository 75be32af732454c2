use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{invalid, Result};

/// Posterior mean and variance at one point.
pub type Posterior = (f64, f64);

fn std_normal() -> Normal {
    Normal::standard()
}

/// Expected improvement below `incumbent` (minimization).
pub fn expected_improvement(post: Posterior, incumbent: f64) -> f64 {
    let (mean, var) = post;
    let sd = var.max(0.0).sqrt();
    let gain = incumbent - mean;
    if sd <= 1e-300 {
        return gain.max(0.0);
    }
    let u = gain / sd;
    let n = std_normal();
    (gain * n.cdf(u) + sd * n.pdf(u)).max(0.0)
}

/// `P(g ≤ 0)` under a Gaussian posterior.
pub fn feasibility_probability(post: Posterior) -> f64 {
    let (mean, var) = post;
    let sd = var.max(0.0).sqrt();
    if sd <= 1e-300 {
        return if mean <= 0.0 { 1.0 } else { 0.0 };
    }
    std_normal().cdf(-mean / sd)
}

/// `ln P(g ≤ 0)`, usable when the probability underflows.
pub fn log_feasibility(post: Posterior) -> f64 {
    let (mean, var) = post;
    let sd = var.max(0.0).sqrt();
    if sd <= 1e-300 {
        return if mean <= 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let u = -mean / sd;
    if u > -30.0 {
        std_normal().cdf(u).ln()
    } else {
        // Mills-ratio asymptote of ln Φ(u).
        -0.5 * u * u - (-u).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// EI times the posterior probability that every constraint holds.
pub fn acquisition_eic(f: Posterior, constraints: &[Posterior], incumbent: f64) -> f64 {
    constraints
        .iter()
        .fold(expected_improvement(f, incumbent), |acc, &g| acc * feasibility_probability(g))
}

/// `β_{t+1} = 0.4 ln(2t + 2)`.
pub fn ucb_beta(t: usize) -> f64 {
    0.4 * (2.0 * t as f64 + 2.0).ln()
}

/// Negated lower confidence bound `−(μ − √β σ)`, or `−∞` when the joint
/// feasibility probability is below `1 − δ`.
pub fn acquisition_cucb(f: Posterior, constraints: &[Posterior], t: usize, delta: f64) -> f64 {
    let p: f64 = constraints.iter().map(|&g| feasibility_probability(g)).product();
    if p < 1.0 - delta {
        return f64::NEG_INFINITY;
    }
    -(f.0 - ucb_beta(t).sqrt() * f.1.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Acquisition {
    /// Expected improvement with constraints.
    #[default]
    Eic,
    /// Lower confidence bound gated on feasibility probability `≥ 1 − δ`.
    ConstrainedUcb { delta: f64 },
}

impl Acquisition {
    pub fn validate(&self) -> Result<()> {
        if let Acquisition::ConstrainedUcb { delta } = *self {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(invalid("bo.acquisition.delta", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    pub fn score(&self, f: Posterior, constraints: &[Posterior], incumbent: f64, t: usize) -> f64 {
        match *self {
            Acquisition::Eic => acquisition_eic(f, constraints, incumbent),
            Acquisition::ConstrainedUcb { delta } => acquisition_cucb(f, constraints, t, delta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ei_without_uncertainty() {
        assert_eq!(expected_improvement((2.0, 0.0), 1.0), 0.0);
        assert_eq!(expected_improvement((1.0, 0.0), 1.0), 0.0);
        assert_eq!(expected_improvement((0.25, 0.0), 1.0), 0.75);
    }

    #[test]
    fn zero_feasibility_kills_eic() {
        assert_eq!(acquisition_eic((0.0, 1.0), &[(1.0, 0.0)], 1.0), 0.0);
    }

    #[test]
    fn first_beta() {
        assert_relative_eq!(ucb_beta(0), 0.277_258_872_223_978_1, epsilon = 1e-12);
    }

    #[test]
    fn cucb_gate() {
        assert_eq!(acquisition_cucb((0.0, 1.0), &[(0.0, 1.0)], 3, 0.1), f64::NEG_INFINITY);
        assert!(acquisition_cucb((0.0, 1.0), &[(-5.0, 1.0)], 3, 0.1).is_finite());
    }

    #[test]
    fn log_feasibility_tails() {
        let a = log_feasibility((1.0, 0.01));
        assert_relative_eq!(a, feasibility_probability((1.0, 0.01)).ln(), max_relative = 1e-9);
        let deep = log_feasibility((100.0, 1.0));
        assert!(deep.is_finite() && deep < -4000.0);
    }
}
