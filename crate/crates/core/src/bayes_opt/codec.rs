use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::gp::{BlockKernel, GpHyper};
use crate::alt_opt::wrap_phase;
use crate::channel::{Design, Dims, C64};
use crate::error::{invalid, Error, Result};

/// Length of the real feature vector of a design: `2N + 2MK_H + 2K_H`.
pub fn feature_dim(dims: &Dims) -> usize {
    2 * dims.n + 2 * dims.m * dims.k_h + 2 * dims.k_h
}

/// `[cos θ; sin θ; Re vec W; Im vec W; Re c; Im c]`, with `vec W` column-major.
pub fn feature_map(d: &Design) -> DVector<f64> {
    let n = d.theta.len();
    let mk = d.w.len();
    let k = d.c.len();
    let mut v = DVector::zeros(2 * n + 2 * mk + 2 * k);
    for (i, t) in d.theta.iter().enumerate() {
        v[i] = t.cos();
        v[n + i] = t.sin();
    }
    let off = 2 * n;
    for (i, z) in d.w.iter().enumerate() {
        v[off + i] = z.re;
        v[off + mk + i] = z.im;
    }
    let off = 2 * n + 2 * mk;
    for (i, z) in d.c.iter().enumerate() {
        v[off + i] = z.re;
        v[off + k + i] = z.im;
    }
    v
}

/// Kernel blocks over the feature vector: phases, precoder, equalizer.
pub fn design_kernel(dims: &Dims) -> BlockKernel {
    let a = 2 * dims.n;
    let b = a + 2 * dims.m * dims.k_h;
    BlockKernel::new(vec![0..a, a..b, b..b + 2 * dims.k_h]).expect("contiguous blocks")
}

/// Default latent dimension `min(D, ⌈8 ε⁻² ln T⌉)`.
pub fn default_latent_dim(ambient: usize, budget: usize, epsilon: f64) -> usize {
    let jl = (8.0 / (epsilon * epsilon) * (budget.max(2) as f64).ln()).ceil() as usize;
    ambient.min(jl).max(1)
}

/// Random linear embedding of designs into `R^d` and its structured inverse.
#[derive(Debug, Clone)]
pub struct LatentCodec {
    dims: Dims,
    p_max: f64,
    projection: DMatrix<f64>,
    decoder: DMatrix<f64>,
}

impl LatentCodec {
    /// Draws `R` with i.i.d. N(0, 1/d) entries; the decoder is `Rᵀ(RRᵀ)⁻¹`.
    pub fn new<R: Rng + ?Sized>(dims: Dims, p_max: f64, latent_dim: usize, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let ambient = feature_dim(&dims);
        if latent_dim == 0 || latent_dim > ambient {
            return Err(invalid("bo.latent_dim", "must lie in 1..=D"));
        }
        if !(p_max > 0.0) {
            return Err(invalid("weights.p_max", "must be positive"));
        }
        let sd = (1.0 / latent_dim as f64).sqrt();
        let projection = DMatrix::from_fn(latent_dim, ambient, |_, _| {
            sd * rng.sample::<f64, _>(StandardNormal)
        });
        let gram = &projection * projection.transpose();
        let inv = gram
            .cholesky()
            .map(|ch| ch.inverse())
            .ok_or_else(|| Error::Singular("R Rᵀ is not invertible".into()))?;
        let decoder = projection.transpose() * inv;
        Ok(LatentCodec {
            dims,
            p_max,
            projection,
            decoder,
        })
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn latent_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn ambient_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn encode(&self, d: &Design) -> DVector<f64> {
        &self.projection * feature_map(d)
    }

    /// Least-norm preimage split into blocks: phases by `atan2`, precoder
    /// scaled back onto the power ball if needed, equalizer as is.
    pub fn decode(&self, z: &DVector<f64>) -> Design {
        assert_eq!(z.len(), self.latent_dim(), "latent vector length");
        let v = &self.decoder * z;
        let Dims { m, n, k_h, .. } = self.dims;
        let theta = DVector::from_fn(n, |i, _| {
            let (c, s) = (v[i], v[n + i]);
            if c == 0.0 && s == 0.0 {
                0.0
            } else {
                wrap_phase(s.atan2(c))
            }
        });
        let mk = m * k_h;
        let off = 2 * n;
        let mut w = DMatrix::from_fn(m, k_h, |i, j| {
            let idx = off + j * m + i;
            C64::new(v[idx], v[idx + mk])
        });
        let power = w.norm_squared();
        if power > self.p_max {
            w *= C64::from((self.p_max / power).sqrt());
        }
        let off = 2 * n + 2 * mk;
        let c = DVector::from_fn(k_h, |i, _| C64::new(v[off + i], v[off + k_h + i]));
        Design { theta, w, c }
    }

    /// Features of the decoded design, the input space of [`Self::kernel`].
    pub fn decoded_features(&self, z: &DVector<f64>) -> DVector<f64> {
        feature_map(&self.decode(z))
    }

    pub fn kernel(&self) -> BlockKernel {
        design_kernel(&self.dims)
    }
}

/// Product kernel on decoded designs: SE in the chordal phase distance, SE on
/// the precoder and SE on the equalizer.
pub fn kernel_latent(codec: &LatentCodec, z1: &DVector<f64>, z2: &DVector<f64>, hyper: &GpHyper) -> f64 {
    codec
        .kernel()
        .eval(&codec.decoded_features(z1), &codec.decoded_features(z2), hyper)
}
