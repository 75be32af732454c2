use rand::Rng;
use serde::{Deserialize, Serialize};

use super::consensus::{bs_fuse, run_sensing_round, AttackKind, BeliefState};
use super::detector::{logit, sigmoid, Hypothesis, LlrModel};
use super::topology::Topology;
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::rng::{derive_seed, rng_from_seed, SimRng};

/// How the sensing graph is generated for each trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    FullyConnected,
    ErdosRenyi { p: f64 },
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec::ErdosRenyi { p: 0.8 }
    }
}

impl TopologySpec {
    pub fn build<R: Rng + ?Sized>(&self, k_h: usize, k_b: usize, rng: &mut R) -> Topology {
        match *self {
            TopologySpec::FullyConnected => Topology::fully_connected(k_h, k_b),
            TopologySpec::ErdosRenyi { p } => Topology::erdos_renyi(k_h, k_b, p, rng),
        }
    }
}

/// Everything needed to simulate one sensing frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingScenario {
    pub k_h: usize,
    pub k_b: usize,
    pub topology: TopologySpec,
    /// Energy-detector samples per user per round.
    pub samples: usize,
    /// Samples in the BS's single end-of-frame measurement.
    pub bs_samples: usize,
    pub snr_db: f64,
    pub sigma2: f64,
    pub rounds: usize,
    /// Initial belief π(0) of every user and of the BS.
    pub prior: f64,
    pub attack: AttackKind,
    pub tau_a: f64,
    /// Values trimmed from each end in consensus and fusion. `0` gives the
    /// naive (untrimmed) mean.
    pub trim: usize,
}

impl SensingScenario {
    /// Defaults: Erdős–Rényi(0.8) graph, stationary prior of the (0.2, 0.3)
    /// Markov chain, τ_a = 0.01, trimming `k_b`, BS measuring `samples` samples.
    pub fn new(k_h: usize, k_b: usize, samples: usize, snr_db: f64, rounds: usize) -> Self {
        SensingScenario {
            k_h,
            k_b,
            topology: TopologySpec::default(),
            samples,
            bs_samples: samples,
            snr_db,
            sigma2: 1.0,
            rounds,
            prior: 0.2 / (0.2 + 0.3),
            attack: AttackKind::AlwaysOne,
            tau_a: 0.01,
            trim: k_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_h == 0 {
            return Err(invalid("sensing.k_h", "at least one honest user"));
        }
        if self.samples == 0 || self.bs_samples == 0 {
            return Err(invalid("sensing.samples", "at least one sample"));
        }
        if self.rounds == 0 {
            return Err(invalid("sensing.rounds", "at least one round"));
        }
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(invalid("sensing.prior", "must lie in (0, 1)"));
        }
        if !(self.sigma2 > 0.0) {
            return Err(invalid("sensing.sigma2", "must be positive"));
        }
        if !(self.tau_a > 0.0) {
            return Err(invalid("sensing.tau_a", "must be positive"));
        }
        if self.k_h + self.k_b < 2 * self.trim + 1 {
            return Err(Error::InsufficientReports {
                needed: 2 * self.trim + 1,
                got: self.k_h + self.k_b,
            });
        }
        if let TopologySpec::ErdosRenyi { p } = self.topology {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid("sensing.topology.p", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    fn user_model(&self) -> LlrModel {
        LlrModel {
            samples: self.samples,
            snr: self.snr_linear(),
            sigma2: self.sigma2,
        }
    }

    fn bs_model(&self) -> LlrModel {
        LlrModel {
            samples: self.bs_samples,
            ..self.user_model()
        }
    }

    /// Simulates one frame under `hypothesis`.
    pub fn run_trial<R: Rng + ?Sized>(
        &self,
        hypothesis: Hypothesis,
        record_states: bool,
        rng: &mut R,
    ) -> TrialOutcome {
        let topology = self.topology.build(self.k_h, self.k_b, rng);
        let users = topology.users();
        let model = self.user_model();

        let mut state = BeliefState::new(users, self.prior);
        for k in 0..users {
            if topology.is_byzantine(k) {
                state.delta[k] = self.attack.report(state.pi[k], rng);
            }
        }

        let bs = self.bs_model();
        let bs_pi = sigmoid(logit(self.prior) + bs.llr(bs.observe(hypothesis, rng)));

        let mut fused = Vec::with_capacity(self.rounds);
        let mut states = Vec::new();
        if record_states {
            states.push(state.clone());
        }
        for _ in 0..self.rounds {
            let energies: Vec<f64> = (0..users).map(|_| model.observe(hypothesis, rng)).collect();
            state = run_sensing_round(&state, &topology, &energies, &model, self.attack, self.trim, rng);
            fused.push(
                bs_fuse(&state.delta, bs_pi, self.tau_a, self.trim)
                    .expect("validated report count"),
            );
            if record_states {
                states.push(state.clone());
            }
        }
        TrialOutcome {
            hypothesis,
            fused,
            bs_pi,
            states,
            honest: topology.honest().collect(),
            min_honest_degree: topology.min_honest_degree(),
        }
    }
}

/// Result of one simulated sensing frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub hypothesis: Hypothesis,
    /// Fused BS belief after each round `1..=R`.
    pub fused: Vec<f64>,
    pub bs_pi: f64,
    /// Belief states for rounds `0..=R`, only when requested.
    pub states: Vec<BeliefState>,
    pub honest: Vec<usize>,
    pub min_honest_degree: usize,
}

impl TrialOutcome {
    pub fn final_fused(&self) -> f64 {
        *self.fused.last().expect("at least one round")
    }
}

/// Runs `trials` independent frames; trial `i` uses the stream
/// `derive_seed(seed, [i])`.
pub fn simulate_trials(
    scenario: &SensingScenario,
    hypothesis: Hypothesis,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Vec<TrialOutcome> {
    exec.map(trials, |i| {
        let mut rng: SimRng = rng_from_seed(derive_seed(seed, &[i as u64]));
        scenario.run_trial(hypothesis, false, &mut rng)
    })
}

/// Threshold whose empirical exceedance rate over `values` is `pfa`:
/// the `⌈(1 − pfa) n⌉`-th order statistic.
pub fn quantile_threshold(values: &[f64], pfa: f64) -> Result<f64> {
    if !(pfa > 0.0 && pfa < 1.0) {
        return Err(invalid("target_pfa", "must lie in (0, 1)"));
    }
    if values.is_empty() {
        return Err(Error::TooFewTrials { needed: 1, got: 0 });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let idx = (((1.0 - pfa) * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let tau = sorted[idx.min(n - 1)];
    let ties = sorted.iter().filter(|&&x| x == tau).count();
    if ties > 1 {
        log::warn!("{ties} calibration values tie at the threshold; false-alarm rate will overshoot");
    }
    Ok(tau)
}

/// Calibrates the decision threshold on simulated H0 frames.
pub fn calibrate_threshold<R: Rng + ?Sized>(
    target_pfa: f64,
    scenario: &SensingScenario,
    trials: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<f64> {
    if !(target_pfa > 0.0 && target_pfa < 1.0) {
        return Err(invalid("target_pfa", "must lie in (0, 1)"));
    }
    let needed = (1.0 / target_pfa).ceil() as usize;
    if trials < needed {
        return Err(Error::TooFewTrials {
            needed,
            got: trials,
        });
    }
    scenario.validate()?;
    let seed: u64 = rng.random();
    let fused: Vec<f64> = simulate_trials(scenario, Hypothesis::H0, trials, seed, exec)
        .iter()
        .map(TrialOutcome::final_fused)
        .collect();
    quantile_threshold(&fused, target_pfa)
}
