use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::alt_opt::AltOptions;
use crate::bayes_opt::BoOptions;
use crate::channel::{Dims, NoiseVariances, Weights};
use crate::error::Error;
use crate::sensing::{AttackKind, SensingScenario, TopologySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PdVsSnr,
    PdVsIter,
    Roc,
    MseVsIter,
    MseVsSnr,
    WptZeta,
    BoVsAlt,
}

impl ExperimentKind {
    pub fn is_sensing(self) -> bool {
        matches!(self, Self::PdVsSnr | Self::PdVsIter | Self::Roc)
    }
}

/// Design procedures compared in the transmission experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Alternating optimization with the true channel.
    Full,
    /// Alternating optimization with noisy gradient feedback.
    Partial,
    /// Constrained Bayesian optimization over the latent box.
    Bayes,
    /// Water-filling bound at the full-CSI phases (sum-MSE metrics only).
    LowerBound,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::Partial => "partial",
            Method::Bayes => "bayes",
            Method::LowerBound => "lower_bound",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingConfig {
    /// Energy-detector sample counts `J` to sweep.
    pub samples: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub rounds: usize,
    pub p01: f64,
    pub p10: f64,
    /// Initial belief; the Markov stationary probability when absent.
    pub prior: Option<f64>,
    pub target_pfa: f64,
    /// Target false-alarm rates for `roc`.
    pub pfa_grid: Vec<f64>,
    pub attack: AttackKind,
    pub topology: TopologySpec,
    /// H0 frames used to calibrate each threshold.
    pub calibration_trials: usize,
    pub bs_samples: Option<usize>,
    pub tau_a: f64,
    /// Trimmed count; `K_B` when absent, `0` for the plain mean.
    pub trim: Option<usize>,
    pub sigma2: f64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        SensingConfig {
            samples: vec![10],
            snr_db: vec![0.0],
            rounds: 25,
            p01: 0.2,
            p10: 0.3,
            prior: None,
            target_pfa: 0.01,
            pfa_grid: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5],
            attack: AttackKind::AlwaysOne,
            topology: TopologySpec::default(),
            calibration_trials: 10_000,
            bs_samples: None,
            tau_a: 0.01,
            trim: None,
            sigma2: 1.0,
        }
    }
}

impl SensingConfig {
    pub fn prior(&self) -> f64 {
        self.prior.unwrap_or(self.p01 / (self.p01 + self.p10))
    }

    pub fn scenario(&self, dims: &Dims, samples: usize, snr_db: f64) -> SensingScenario {
        let mut s = SensingScenario::new(dims.k_h, dims.k_b, samples, snr_db, self.rounds);
        s.topology = self.topology;
        s.bs_samples = self.bs_samples.unwrap_or(samples);
        s.sigma2 = self.sigma2;
        s.prior = self.prior();
        s.attack = self.attack;
        s.tau_a = self.tau_a;
        s.trim = self.trim.unwrap_or(dims.k_b);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub weights: Weights,
    pub noise: NoiseVariances,
    pub solver: AltOptions,
    /// CSI error level of the partial-CSI method.
    pub partial_epsilon: f64,
    /// Transmit SNR grid `P_max / σ²` in dB; overrides `weights.p_max`.
    pub snr_db: Vec<f64>,
    pub methods: Vec<Method>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            weights: Weights::default(),
            noise: NoiseVariances::default(),
            solver: AltOptions::default(),
            partial_epsilon: 0.1,
            snr_db: vec![0.0],
            methods: vec![Method::Full, Method::Partial, Method::Bayes],
        }
    }
}

/// Channel model the Bayesian search averages over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoChannel {
    /// Perturbations of the trial's channel at error level `epsilon`.
    AroundNominal { epsilon: f64 },
    /// Independent Rayleigh draws; the design ignores the trial's channel.
    IidRayleigh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    pub search: BoOptions,
    pub n_mc: usize,
    /// Latent dimension; `min(D, ⌈8 ε⁻² ln T⌉)` when absent.
    pub latent_dim: Option<usize>,
    pub jl_epsilon: f64,
    pub channel: BoChannel,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            search: BoOptions {
                budget: 80,
                ..BoOptions::default()
            },
            n_mc: 32,
            latent_dim: None,
            jl_epsilon: 0.5,
            channel: BoChannel::AroundNominal { epsilon: 0.1 },
        }
    }
}

/// One experiment: what to run, on which system, how often and with which
/// master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub kind: ExperimentKind,
    pub dims: Dims,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sensing: SensingConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub bo: BoConfig,
}

/// Qualifies a library error with its config path. Library names may
/// already carry their section (`weights.p_max`), which is not repeated.
fn field(prefix: &str, e: Error) -> HarnessError {
    match e {
        Error::InvalidParameter { name, reason } => {
            let name = name.replacen("dual.", "dual0.", 1);
            let rest = match name.split_once('.') {
                Some((head, tail)) if prefix.split('.').any(|p| p == head) => tail,
                _ => &name,
            };
            HarnessError::Config {
                field: format!("{prefix}.{rest}"),
                reason,
            }
        }
        other => HarnessError::Config {
            field: prefix.to_string(),
            reason: other.to_string(),
        },
    }
}

fn bad(field: &str, reason: &str) -> HarnessError {
    HarnessError::Config {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Checks every section the experiment kind uses.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.id.is_empty() {
            return Err(bad("id", "must not be empty"));
        }
        if self.trials == 0 {
            return Err(bad("trials", "at least one trial"));
        }
        self.dims.validate().map_err(|e| field("dims", e))?;
        if self.kind.is_sensing() {
            self.validate_sensing()
        } else {
            self.validate_optimizer()?;
            if self.optimizer.methods.contains(&Method::Bayes) || self.kind == ExperimentKind::BoVsAlt {
                self.validate_bo()?;
            }
            Ok(())
        }
    }

    fn validate_sensing(&self) -> Result<(), HarnessError> {
        let s = &self.sensing;
        if s.samples.is_empty() || s.samples.contains(&0) {
            return Err(bad("sensing.samples", "need positive sample counts"));
        }
        if s.snr_db.is_empty() || s.snr_db.iter().any(|x| !x.is_finite()) {
            return Err(bad("sensing.snr_db", "need finite values"));
        }
        for (name, p) in [("sensing.p01", s.p01), ("sensing.p10", s.p10)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(bad(name, "must lie in [0, 1]"));
            }
        }
        if s.prior.is_none() && s.p01 + s.p10 == 0.0 {
            return Err(bad("sensing.p01", "p01 + p10 must be positive"));
        }
        let pfas: Vec<f64> = if self.kind == ExperimentKind::Roc {
            if s.pfa_grid.is_empty() {
                return Err(bad("sensing.pfa_grid", "must not be empty"));
            }
            s.pfa_grid.clone()
        } else {
            vec![s.target_pfa]
        };
        for pfa in pfas {
            if !(pfa > 0.0 && pfa < 1.0) {
                return Err(bad("sensing.target_pfa", "must lie in (0, 1)"));
            }
            let needed = (1.0 / pfa).ceil() as usize;
            if s.calibration_trials < needed {
                return Err(field(
                    "sensing.calibration_trials",
                    Error::TooFewTrials {
                        needed,
                        got: s.calibration_trials,
                    },
                ));
            }
        }
        self.sensing
            .scenario(&self.dims, s.samples[0], s.snr_db[0])
            .validate()
            .map_err(|e| match e {
                Error::InvalidParameter { name, reason } => HarnessError::Config {
                    field: name.to_string(),
                    reason,
                },
                other => field("sensing", other),
            })
    }

    fn validate_optimizer(&self) -> Result<(), HarnessError> {
        let o = &self.optimizer;
        o.weights.validate().map_err(|e| field("optimizer.weights", e))?;
        o.solver.validate().map_err(|e| field("optimizer.solver", e))?;
        if !(o.noise.user > 0.0 && o.noise.eavesdropper > 0.0) {
            return Err(bad("optimizer.noise", "must be positive"));
        }
        if !(0.0..1.0).contains(&o.partial_epsilon) {
            return Err(bad("optimizer.partial_epsilon", "must lie in [0, 1)"));
        }
        if o.snr_db.is_empty() || o.snr_db.iter().any(|x| !x.is_finite()) {
            return Err(bad("optimizer.snr_db", "need finite values"));
        }
        if o.methods.is_empty() {
            return Err(bad("optimizer.methods", "must not be empty"));
        }
        if o.methods.contains(&Method::LowerBound)
            && matches!(self.kind, ExperimentKind::MseVsIter | ExperimentKind::WptZeta)
        {
            return Err(bad("optimizer.methods", "lower_bound only applies to final sum MSE"));
        }
        Ok(())
    }

    fn validate_bo(&self) -> Result<(), HarnessError> {
        let b = &self.bo;
        b.search.validate().map_err(|e| field("bo.search", e))?;
        if b.n_mc == 0 {
            return Err(bad("bo.n_mc", "at least one draw"));
        }
        if !(b.jl_epsilon > 0.0 && b.jl_epsilon < 1.0) {
            return Err(bad("bo.jl_epsilon", "must lie in (0, 1)"));
        }
        if let Some(d) = b.latent_dim {
            let ambient = crate::bayes_opt::feature_dim(&self.dims);
            if d == 0 || d > ambient {
                return Err(bad("bo.latent_dim", "must lie in 1..=D"));
            }
        }
        if let BoChannel::AroundNominal { epsilon } = b.channel {
            if !(0.0..1.0).contains(&epsilon) {
                return Err(bad("bo.channel.epsilon", "must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}
