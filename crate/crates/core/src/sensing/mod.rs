//! Distributed Byzantine-resilient spectrum sensing.
//!
//! Honest users accumulate log-likelihood ratios of energy observations in the
//! logit domain, share a capped trimmed-mean decision variable with their
//! neighbours for a fixed number of synchronous rounds, and the BS fuses the
//! final reports with attention weights and a min-rule against its own belief.

mod consensus;
mod detector;
mod scenario;
mod topology;

pub use consensus::{
    attention_weights, bs_fuse, run_sensing_round, trimmed_consensus, trimmed_mean, AttackKind,
    BeliefState, FusionParams,
};
pub use detector::{
    decide, energy_statistic, llr, logit, pu_markov_step, sigmoid, Hypothesis, LlrModel,
    LOGIT_CLAMP,
};
pub use scenario::{
    calibrate_threshold, quantile_threshold, simulate_trials, SensingScenario, TopologySpec,
    TrialOutcome,
};
pub use topology::Topology;
