use rand::Rng;
use serde::{Deserialize, Serialize};

use super::detector::{logit, sigmoid, LlrModel};
use super::topology::Topology;
use crate::error::{invalid, Error, Result};

/// Per-user belief state: logit `psi`, belief `pi = sigmoid(psi)` and the
/// shared decision variable `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub psi: Vec<f64>,
    pub pi: Vec<f64>,
    pub delta: Vec<f64>,
}

impl BeliefState {
    /// Every user starts from `prior`, with `delta(0) = pi(0)`.
    pub fn new(users: usize, prior: f64) -> Self {
        let psi = logit(prior);
        BeliefState {
            psi: vec![psi; users],
            pi: vec![sigmoid(psi); users],
            delta: vec![sigmoid(psi); users],
        }
    }

    /// `ψ_k ← ψ_k + ℓ`, `π_k ← sigmoid(ψ_k)`.
    pub fn logit_update(&mut self, k: usize, ell: f64) {
        self.psi[k] += ell;
        self.pi[k] = sigmoid(self.psi[k]);
    }
}

/// Value reported by a Byzantine user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    AlwaysOne,
    AlwaysZero,
    /// Reports `1 − π` of its own (honestly computed) belief.
    Inverted,
    UniformRandom,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::AlwaysOne,
        AttackKind::AlwaysZero,
        AttackKind::Inverted,
        AttackKind::UniformRandom,
    ];

    pub fn report<R: Rng + ?Sized>(self, own_belief: f64, rng: &mut R) -> f64 {
        match self {
            AttackKind::AlwaysOne => 1.0,
            AttackKind::AlwaysZero => 0.0,
            AttackKind::Inverted => 1.0 - own_belief,
            AttackKind::UniformRandom => rng.random(),
        }
    }
}

/// BS fusion and decision parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionParams {
    /// Attention temperature τ_a.
    pub tau_a: f64,
    /// Decision threshold τ.
    pub tau: f64,
    /// Consensus rounds.
    pub rounds: usize,
    /// Values trimmed from each end, normally `K_B`.
    pub trim_count: usize,
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_a > 0.0) {
            return Err(invalid("fusion.tau_a", "must be positive"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(invalid("fusion.tau", "must lie in (0, 1)"));
        }
        if self.rounds == 0 {
            return Err(invalid("fusion.rounds", "at least one round"));
        }
        Ok(())
    }
}

/// Mean after dropping the `trim` largest and `trim` smallest values.
/// `None` when fewer than `2 trim + 1` values are given.
pub fn trimmed_mean(values: &[f64], trim: usize) -> Option<f64> {
    if values.len() < 2 * trim + 1 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let kept = &sorted[trim..sorted.len() - trim];
    Some(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Capped trimmed-mean update for user `k` from its neighbours' previous-round
/// decisions. Neighbourhoods smaller than `2 trim + 1` fall back to `pi_k`.
pub fn trimmed_consensus(
    prev_delta: &[f64],
    pi_k: f64,
    neighbors: &[usize],
    trim: usize,
) -> f64 {
    let reports: Vec<f64> = neighbors.iter().map(|&i| prev_delta[i]).collect();
    match trimmed_mean(&reports, trim) {
        Some(m) => pi_k.min(m),
        None => pi_k,
    }
}

/// One synchronous round. `energies[k]` is user `k`'s fresh observation.
///
/// Every user folds its LLR into its own logit; honest users then apply the
/// capped trimmed mean to the neighbours' previous-round `delta`, Byzantine
/// users overwrite `delta` with their attack value.
pub fn run_sensing_round<R: Rng + ?Sized>(
    state: &BeliefState,
    topology: &Topology,
    energies: &[f64],
    model: &LlrModel,
    attack: AttackKind,
    trim: usize,
    rng: &mut R,
) -> BeliefState {
    let mut next = state.clone();
    for (k, &e) in energies.iter().enumerate() {
        next.logit_update(k, model.llr(e));
    }
    for k in 0..topology.users() {
        next.delta[k] = if topology.is_byzantine(k) {
            attack.report(next.pi[k], rng)
        } else {
            trimmed_consensus(&state.delta, next.pi[k], topology.neighbors(k), trim)
        };
    }
    next
}

/// Softmax-style attention weights `α_k ∝ exp(−(δ_k − δ̄)²/τ_a)` over `values`.
pub fn attention_weights(values: &[f64], tau_a: f64) -> Vec<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let scores: Vec<f64> = values.iter().map(|d| -(d - mean).powi(2) / tau_a).collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// BS fusion: trim `trim` reports from each end, attention-weight the
/// survivors, and cap the result by the BS's own belief.
pub fn bs_fuse(final_deltas: &[f64], bs_pi: f64, tau_a: f64, trim: usize) -> Result<f64> {
    let needed = 2 * trim + 1;
    if final_deltas.len() < needed {
        return Err(Error::InsufficientReports {
            needed,
            got: final_deltas.len(),
        });
    }
    let mut sorted = final_deltas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let survivors = &sorted[trim..sorted.len() - trim];
    let alpha = attention_weights(survivors, tau_a);
    let attended: f64 = alpha.iter().zip(survivors).map(|(a, d)| a * d).sum();
    Ok(attended.min(bs_pi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::sensing::detector::Hypothesis;
    use approx::assert_relative_eq;
    use rand::Rng;
    use proptest::prelude::*;

    #[test]
    fn trimmed_consensus_examples() {
        let prev = [0.0, 0.4, 0.5, 0.6, 1.0];
        let nbrs = [0, 1, 2, 3, 4];
        assert_relative_eq!(trimmed_consensus(&prev, 0.8, &nbrs, 1), 0.5);
        assert_relative_eq!(trimmed_consensus(&prev, 0.3, &nbrs, 1), 0.3);
        assert_eq!(trimmed_consensus(&prev, 0.8, &[0, 4], 1), 0.8);
    }

    #[test]
    fn logit_update_examples() {
        let mut s = BeliefState::new(1, 0.5);
        s.logit_update(0, 0.0);
        assert_eq!(s.pi[0], 0.5);
        s.logit_update(0, 2.5);
        s.logit_update(0, -2.5);
        assert_relative_eq!(s.pi[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn logit_form_matches_ratio_form() {
        let mut rng = rng_from_seed(8);
        for _ in 0..1000 {
            let pi0: f64 = rng.random_range(0.01..0.99);
            let lr: f64 = (rng.random_range(-4.0..4.0f64)).exp();
            let ratio_form = pi0 * lr / (1.0 - pi0 + pi0 * lr);
            let inverse_form = 1.0 / (1.0 + (1.0 / pi0 - 1.0) / lr);
            let mut s = BeliefState::new(1, pi0);
            s.logit_update(0, lr.ln());
            assert_relative_eq!(s.pi[0], ratio_form, epsilon = 1e-12);
            assert_relative_eq!(s.pi[0], inverse_form, epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetric_round_gives_equal_decisions() {
        let topo = Topology::fully_connected(6, 0);
        let model = LlrModel {
            samples: 10,
            snr: 1.0,
            sigma2: 1.0,
        };
        let s0 = BeliefState::new(6, 0.4);
        let s1 = run_sensing_round(
            &s0,
            &topo,
            &[12.0; 6],
            &model,
            AttackKind::AlwaysOne,
            0,
            &mut rng_from_seed(1),
        );
        assert!(s1.delta.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn always_one_attack_cannot_lift_honest_decisions() {
        let model = LlrModel {
            samples: 10,
            snr: 0.5,
            sigma2: 1.0,
        };
        let mut rng = rng_from_seed(12);
        for _ in 0..30 {
            let topo = Topology::erdos_renyi(8, 3, 0.8, &mut rng);
            let mut s = BeliefState::new(11, 0.4);
            for _ in 0..10 {
                let energies: Vec<f64> = (0..11)
                    .map(|_| model.observe(Hypothesis::H0, &mut rng))
                    .collect();
                s = run_sensing_round(&s, &topo, &energies, &model, AttackKind::AlwaysOne, 3, &mut rng);
                let max_honest_pi = topo.honest().map(|k| s.pi[k]).fold(0.0, f64::max);
                for k in topo.honest() {
                    assert!(s.delta[k] <= s.pi[k]);
                    assert!(s.delta[k] <= max_honest_pi);
                }
            }
        }
    }

    #[test]
    fn fusion_examples() {
        assert_relative_eq!(bs_fuse(&[0.6; 7], 1.0, 0.01, 3).unwrap(), 0.6, epsilon = 1e-15);
        assert_relative_eq!(bs_fuse(&[0.9; 3], 0.7, 0.01, 1).unwrap(), 0.7);
        assert!(matches!(
            bs_fuse(&[0.1, 0.2], 1.0, 0.01, 1),
            Err(Error::InsufficientReports { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn high_temperature_attention_is_arithmetic_mean() {
        let reports = [0.05, 0.2, 0.33, 0.5, 0.61, 0.8, 0.97];
        let fused = bs_fuse(&reports, 1.0, 1e6, 2).unwrap();
        let survivors_mean = (0.33 + 0.5 + 0.61) / 3.0;
        assert!((fused - survivors_mean).abs() < 1e-9);
    }

    #[test]
    fn attack_reports_stay_in_unit_interval() {
        let mut rng = rng_from_seed(3);
        for a in AttackKind::ALL {
            for pi in [0.0, 0.3, 1.0] {
                let v = a.report(pi, &mut rng);
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    proptest! {
        #[test]
        fn trimmed_mean_stays_within_honest_range(
            honest in prop::collection::vec(0.2f64..0.7, 7..12),
            byz in prop::collection::vec(0.0f64..=1.0, 0..=3),
        ) {
            let trim = 3;
            let lo = honest.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = honest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut all = honest.clone();
            all.extend(&byz);
            let m = trimmed_mean(&all, trim).unwrap();
            prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        }

        #[test]
        fn attention_weights_are_a_distribution(
            vals in prop::collection::vec(0.0f64..=1.0, 1..20),
            tau in 1e-4f64..10.0,
        ) {
            let a = attention_weights(&vals, tau);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(a.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
