//! CSI-free design search.
//!
//! Designs are embedded in a low-dimensional latent box by a random
//! projection and decoded back through a least-norm preimage. Gaussian
//! process surrogates model the Monte Carlo objective and constraints, and
//! the loop picks points by constrained expected improvement or a gated
//! lower confidence bound.

mod acquisition;
mod codec;
mod engine;
mod gp;
mod problem;

pub use acquisition::{
    acquisition_cucb, acquisition_eic, expected_improvement, feasibility_probability,
    log_feasibility, ucb_beta, Acquisition, Posterior,
};
pub use codec::{
    default_latent_dim, design_kernel, feature_dim, feature_map, kernel_latent, LatentCodec,
};
pub use engine::{latin_hypercube, run_bo, BoOptions, BoOutcome, BoRecord, BoState};
pub use gp::{gp_fit, BlockKernel, FitOptions, GaussianProcess, GpHyper, NOISE_FLOOR};
pub use problem::{
    mc_objective, BlackBox, ChannelPrior, IrsProblem, McEstimate, Observation, SyntheticQuadratic,
};
