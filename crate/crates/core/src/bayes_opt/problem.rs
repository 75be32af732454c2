use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codec::LatentCodec;
use super::gp::BlockKernel;
use crate::alt_opt::CsiOracle;
use crate::channel::{evaluate, ChannelSet, Dims, NoiseVariances, Weights};
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::rng::{derive_seed, rng_from_seed};

/// One noisy black-box evaluation: objective and constraints `g_j ≤ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub f: f64,
    pub g: Vec<f64>,
}

impl Observation {
    pub fn feasible(&self) -> bool {
        self.g.iter().all(|&g| g <= 0.0)
    }

    /// Total positive constraint violation.
    pub fn violation(&self) -> f64 {
        self.g.iter().map(|g| g.max(0.0)).sum()
    }
}

/// Expensive objective searched over a latent box.
pub trait BlackBox: Sync {
    fn latent_dim(&self) -> usize;

    fn n_constraints(&self) -> usize;

    /// Representation the surrogate kernel works on.
    fn features(&self, z: &DVector<f64>) -> DVector<f64>;

    fn kernel(&self) -> BlockKernel;

    /// Evaluates at `z`; all randomness comes from `seed`.
    fn evaluate(&self, z: &DVector<f64>, seed: u64) -> Observation;

    /// Constraint `j` when it is known in closed form at `z`.
    fn known_constraint(&self, _j: usize, _z: &DVector<f64>) -> Option<f64> {
        None
    }
}

/// Where the Monte Carlo channel draws come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelPrior {
    /// Fresh i.i.d. Rayleigh channels for every draw.
    IidRayleigh { noise: NoiseVariances },
    /// `√(1−ε²) H + ε E` around a nominal channel `H`.
    AroundNominal { nominal: ChannelSet, epsilon: f64 },
}

impl ChannelPrior {
    fn validate(&self, dims: &Dims) -> Result<()> {
        match self {
            ChannelPrior::IidRayleigh { noise } => {
                if !(noise.user > 0.0 && noise.eavesdropper > 0.0) {
                    return Err(invalid("channel.noise", "must be positive"));
                }
            }
            ChannelPrior::AroundNominal { nominal, epsilon } => {
                nominal.validate()?;
                if nominal.dims() != *dims {
                    return Err(invalid("channel.nominal", "dimensions differ from the codec"));
                }
                CsiOracle::Noisy { epsilon: *epsilon }.validate()?;
            }
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, dims: &Dims, rng: &mut R) -> ChannelSet {
        match self {
            ChannelPrior::IidRayleigh { noise } => ChannelSet::sample(dims, noise, rng),
            ChannelPrior::AroundNominal { nominal, epsilon } => CsiOracle::Noisy { epsilon: *epsilon }
                .estimate(nominal, rng)
                .into_owned(),
        }
    }
}

/// Monte Carlo averages with their standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub f: f64,
    /// Leakage minus its cap, averaged over draws.
    pub g_leak: f64,
    /// Power minus budget; the same for every draw.
    pub g_power: f64,
    pub f_stderr: f64,
    pub g_leak_stderr: f64,
    pub draws: usize,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Decodes `z` once and averages the objective and constraints over
/// `n_mc` channel draws, each on its own RNG stream.
pub fn mc_objective<R: Rng + ?Sized>(
    z: &DVector<f64>,
    codec: &LatentCodec,
    weights: &Weights,
    prior: &ChannelPrior,
    n_mc: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<McEstimate> {
    if n_mc == 0 {
        return Err(invalid("bo.n_mc", "at least one draw"));
    }
    weights.validate()?;
    prior.validate(codec.dims())?;
    let design = codec.decode(z);
    let base: u64 = rng.random();
    let evals = exec.map(n_mc, |i| {
        let mut r = rng_from_seed(derive_seed(base, &[i as u64]));
        let cs = prior.draw(codec.dims(), &mut r);
        evaluate(&cs, &design, weights).map(|e| (e.objective, e.g_leak))
    });
    let evals = evals.into_iter().collect::<Result<Vec<_>>>()?;
    let f: Vec<f64> = evals.iter().map(|e| e.0).collect();
    let g: Vec<f64> = evals.iter().map(|e| e.1).collect();
    let (f, f_stderr) = mean_stderr(&f);
    let (g_leak, g_leak_stderr) = mean_stderr(&g);
    Ok(McEstimate {
        f,
        g_leak,
        g_power: design.power() - weights.p_max,
        f_stderr,
        g_leak_stderr,
        draws: n_mc,
    })
}

/// The secure-transmission design problem seen through a latent codec.
#[derive(Debug, Clone)]
pub struct IrsProblem {
    pub codec: LatentCodec,
    pub weights: Weights,
    pub prior: ChannelPrior,
    pub n_mc: usize,
    pub exec: Execution,
}

impl IrsProblem {
    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 {
            return Err(invalid("bo.n_mc", "at least one draw"));
        }
        self.weights.validate()?;
        self.prior.validate(self.codec.dims())
    }
}

impl BlackBox for IrsProblem {
    fn latent_dim(&self) -> usize {
        self.codec.latent_dim()
    }

    /// Leakage, then power.
    fn n_constraints(&self) -> usize {
        2
    }

    fn features(&self, z: &DVector<f64>) -> DVector<f64> {
        self.codec.decoded_features(z)
    }

    fn kernel(&self) -> BlockKernel {
        self.codec.kernel()
    }

    fn evaluate(&self, z: &DVector<f64>, seed: u64) -> Observation {
        let est = mc_objective(
            z,
            &self.codec,
            &self.weights,
            &self.prior,
            self.n_mc,
            &mut rng_from_seed(seed),
            self.exec,
        )
        .expect("problem validated before the search");
        Observation {
            f: est.f,
            g: vec![est.g_leak, est.g_power],
        }
    }

    fn known_constraint(&self, j: usize, z: &DVector<f64>) -> Option<f64> {
        (j == 1).then(|| self.codec.decode(z).power() - self.weights.p_max)
    }
}

/// `min (z1 − 1.5)² + (z2 − 1)²  s.t.  z1 + z2 ≤ 1`, optimum 1.125 at
/// (0.75, 0.25).
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticQuadratic;

impl SyntheticQuadratic {
    pub const OPTIMUM: f64 = 1.125;

    pub fn objective(z: &[f64]) -> f64 {
        (z[0] - 1.5).powi(2) + (z[1] - 1.0).powi(2)
    }

    pub fn constraint(z: &[f64]) -> f64 {
        z[0] + z[1] - 1.0
    }
}

impl BlackBox for SyntheticQuadratic {
    fn latent_dim(&self) -> usize {
        2
    }

    fn n_constraints(&self) -> usize {
        1
    }

    fn features(&self, z: &DVector<f64>) -> DVector<f64> {
        z.clone()
    }

    fn kernel(&self) -> BlockKernel {
        BlockKernel::ard(2)
    }

    fn evaluate(&self, z: &DVector<f64>, _seed: u64) -> Observation {
        Observation {
            f: Self::objective(z.as_slice()),
            g: vec![Self::constraint(z.as_slice())],
        }
    }
}
