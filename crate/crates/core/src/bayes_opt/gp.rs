use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;
/// Smallest noise-to-signal ratio the fit will select.
pub const NOISE_FLOOR: f64 = 1e-6;

/// Squared-exponential kernel that is separable over contiguous blocks of the
/// input vector, one length scale per block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockKernel {
    blocks: Vec<Range<usize>>,
}

impl BlockKernel {
    pub fn new(blocks: Vec<Range<usize>>) -> Result<Self> {
        if blocks.is_empty() || blocks.iter().any(|b| b.is_empty()) {
            return Err(invalid("kernel.blocks", "need at least one non-empty block"));
        }
        for pair in blocks.windows(2) {
            if pair[0].end != pair[1].start {
                return Err(invalid("kernel.blocks", "blocks must be contiguous"));
            }
        }
        if blocks[0].start != 0 {
            return Err(invalid("kernel.blocks", "first block must start at 0"));
        }
        Ok(BlockKernel { blocks })
    }

    /// One length scale shared by all coordinates.
    #[allow(clippy::single_range_in_vec_init)]
    pub fn isotropic(dim: usize) -> Self {
        BlockKernel { blocks: vec![0..dim.max(1)] }
    }

    /// One length scale per coordinate.
    pub fn ard(dim: usize) -> Self {
        BlockKernel {
            blocks: (0..dim.max(1)).map(|i| i..i + 1).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.end)
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    /// Per-block squared Euclidean distances.
    pub fn sq_dists(&self, a: &DVector<f64>, b: &DVector<f64>) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|r| r.clone().map(|i| (a[i] - b[i]).powi(2)).sum())
            .collect()
    }

    fn from_sq_dists(sq: &[f64], h: &GpHyper) -> f64 {
        let s: f64 = sq
            .iter()
            .zip(&h.lengthscales)
            .map(|(d, l)| d / (l * l))
            .sum();
        h.signal_var * (-0.5 * s).exp()
    }

    pub fn eval(&self, a: &DVector<f64>, b: &DVector<f64>, h: &GpHyper) -> f64 {
        Self::from_sq_dists(&self.sq_dists(a, b), h)
    }

    pub fn matrix(&self, xs: &[DVector<f64>], h: &GpHyper) -> DMatrix<f64> {
        let n = xs.len();
        DMatrix::from_fn(n, n, |i, j| self.eval(&xs[i], &xs[j], h))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHyper {
    pub fn new(lengthscales: Vec<f64>, signal_var: f64, noise_var: f64) -> Self {
        GpHyper {
            lengthscales,
            signal_var,
            noise_var,
        }
    }

    pub fn validate(&self, kernel: &BlockKernel) -> Result<()> {
        if self.lengthscales.len() != kernel.n_blocks() {
            return Err(Error::DimensionMismatch(format!(
                "{} length scales for {} kernel blocks",
                self.lengthscales.len(),
                kernel.n_blocks()
            )));
        }
        if self.lengthscales.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(invalid("gp.lengthscales", "must be positive and finite"));
        }
        if !(self.signal_var > 0.0 && self.signal_var.is_finite()) {
            return Err(invalid("gp.signal_var", "must be positive"));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(invalid("gp.noise_var", "must be non-negative"));
        }
        Ok(())
    }
}

/// Cholesky of `k`, adding jitter 1e-8, 1e-7, ..., 1e-4 to the diagonal
/// when the plain factorization fails.
fn factor(k: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(ch) = k.clone().cholesky() {
        return Ok((ch, 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * 1.000_001 {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(ch) = kj.cholesky() {
            log::debug!("kernel matrix needed jitter {jitter:e}");
            return Ok((ch, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite { jitter: JITTER_MAX })
}

/// GP regression posterior with a constant prior mean.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    kernel: BlockKernel,
    hyper: GpHyper,
    inputs: Vec<DVector<f64>>,
    offset: f64,
    scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GaussianProcess {
    /// Conditions a zero-mean GP with fixed hyperparameters on the data.
    pub fn new(
        kernel: BlockKernel,
        hyper: GpHyper,
        inputs: Vec<DVector<f64>>,
        targets: &[f64],
    ) -> Result<Self> {
        Self::condition(kernel, hyper, inputs, targets, 0.0, 1.0)
    }

    fn condition(
        kernel: BlockKernel,
        hyper: GpHyper,
        inputs: Vec<DVector<f64>>,
        targets: &[f64],
        offset: f64,
        scale: f64,
    ) -> Result<Self> {
        hyper.validate(&kernel)?;
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs, {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(x) = inputs.iter().find(|x| x.len() != kernel.dim()) {
            return Err(Error::DimensionMismatch(format!(
                "input of length {} for kernel of dimension {}",
                x.len(),
                kernel.dim()
            )));
        }
        let mut k = kernel.matrix(&inputs, &hyper);
        for i in 0..k.nrows() {
            k[(i, i)] += hyper.noise_var;
        }
        let (chol, jitter) = factor(&k)?;
        let y = DVector::from_iterator(targets.len(), targets.iter().map(|t| (t - offset) / scale));
        let alpha = chol.solve(&y);
        Ok(GaussianProcess {
            kernel,
            hyper,
            inputs,
            offset,
            scale,
            chol,
            alpha,
            jitter,
        })
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn kernel(&self) -> &BlockKernel {
        &self.kernel
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Per-block squared distances from `x` to every training input, one row
    /// per training point. Surrogates sharing inputs can share this.
    pub fn cross_sq_dists(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let nb = self.kernel.n_blocks();
        let mut out = DMatrix::zeros(self.inputs.len(), nb);
        for (i, xi) in self.inputs.iter().enumerate() {
            for (b, d) in self.kernel.sq_dists(x, xi).into_iter().enumerate() {
                out[(i, b)] = d;
            }
        }
        out
    }

    /// Posterior mean and variance from precomputed [`Self::cross_sq_dists`].
    pub fn predict_with(&self, sq: &DMatrix<f64>) -> (f64, f64) {
        let n = self.inputs.len();
        let mut row = vec![0.0; self.kernel.n_blocks()];
        let kt = DVector::from_fn(n, |i, _| {
            for (b, r) in row.iter_mut().enumerate() {
                *r = sq[(i, b)];
            }
            BlockKernel::from_sq_dists(&row, &self.hyper)
        });
        let mean = kt.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kt)
            .expect("cholesky factor has a positive diagonal");
        let var = (self.hyper.signal_var - v.norm_squared()).max(0.0);
        (
            self.offset + self.scale * mean,
            self.scale * self.scale * var,
        )
    }

    pub fn predict(&self, x: &DVector<f64>) -> (f64, f64) {
        self.predict_with(&self.cross_sq_dists(x))
    }

    /// `0.5 log det(I + K / σ_n²)`, the information gain of the training set.
    pub fn info_gain(&self) -> f64 {
        let noise = self.hyper.noise_var + self.jitter;
        if noise <= 0.0 {
            return f64::INFINITY;
        }
        let n = self.inputs.len() as f64;
        let logdet: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        logdet - 0.5 * n * noise.ln()
    }
}

/// Hyperparameter search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Multipliers on the per-block median distance used as starts.
    pub starts: Vec<f64>,
    /// Noise-to-signal ratios tried at every start.
    pub noise_ratios: Vec<f64>,
    /// Coordinate-refinement sweeps from the best start.
    pub sweeps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            starts: vec![0.1, 0.3, 1.0, 3.0, 10.0],
            noise_ratios: vec![1e-6, 1e-4, 1e-2, 1e-1],
            sweeps: 3,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.starts.is_empty() || self.starts.iter().any(|&s| !(s > 0.0)) {
            return Err(invalid("bo.fit.starts", "need positive multipliers"));
        }
        if self.noise_ratios.is_empty() || self.noise_ratios.iter().any(|&r| !(r >= NOISE_FLOOR)) {
            return Err(invalid("bo.fit.noise_ratios", "must be at least 1e-6"));
        }
        Ok(())
    }
}

/// Profile log marginal likelihood over (length scales, noise ratio) with
/// the signal variance maximized in closed form.
struct Profile<'a> {
    dists: &'a [DMatrix<f64>],
    y: &'a DVector<f64>,
}

struct ProfilePoint {
    lml: f64,
    signal_var: f64,
}

struct Candidate {
    ls: Vec<f64>,
    ratio: f64,
    point: ProfilePoint,
}

impl Profile<'_> {
    fn eval(&self, ls: &[f64], ratio: f64) -> Option<ProfilePoint> {
        let n = self.y.len();
        let mut k = DMatrix::from_fn(n, n, |i, j| {
            let s: f64 = self
                .dists
                .iter()
                .zip(ls)
                .map(|(d, l)| d[(i, j)] / (l * l))
                .sum();
            (-0.5 * s).exp()
        });
        for i in 0..n {
            k[(i, i)] += ratio;
        }
        let (ch, _) = factor(&k).ok()?;
        let quad = self.y.dot(&ch.solve(self.y));
        let logdet: f64 = ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        let signal_var = (quad / n as f64).max(1e-12);
        let nf = n as f64;
        let lml = -0.5 * nf * signal_var.ln() - logdet
            - 0.5 * nf * (1.0 + (2.0 * std::f64::consts::PI).ln());
        lml.is_finite().then_some(ProfilePoint { lml, signal_var })
    }
}

/// Fits hyperparameters by maximizing the log marginal likelihood over a
/// multi-start grid followed by coordinate refinement, then conditions on
/// the data. Targets are standardized internally.
pub fn gp_fit(
    kernel: &BlockKernel,
    inputs: Vec<DVector<f64>>,
    targets: &[f64],
    opts: &FitOptions,
) -> Result<GaussianProcess> {
    opts.validate()?;
    let n = inputs.len();
    if n < 2 {
        return Err(invalid("gp.data", "need at least two points"));
    }
    if targets.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} inputs, {} targets", targets.len())));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(invalid("gp.targets", "must be finite"));
    }
    let offset = targets.iter().sum::<f64>() / n as f64;
    let var = targets.iter().map(|t| (t - offset).powi(2)).sum::<f64>() / n as f64;
    let scale = if var.sqrt() > 1e-12 * offset.abs().max(1.0) { var.sqrt() } else { 1.0 };
    let y = DVector::from_iterator(n, targets.iter().map(|t| (t - offset) / scale));

    let nb = kernel.n_blocks();
    let mut dists = vec![DMatrix::zeros(n, n); nb];
    for i in 0..n {
        for j in 0..i {
            for (b, d) in kernel.sq_dists(&inputs[i], &inputs[j]).into_iter().enumerate() {
                dists[b][(i, j)] = d;
                dists[b][(j, i)] = d;
            }
        }
    }
    let base: Vec<f64> = dists
        .iter()
        .map(|d| {
            let mut v: Vec<f64> = (0..n)
                .flat_map(|i| (0..i).map(move |j| (i, j)))
                .map(|(i, j)| d[(i, j)].sqrt())
                .filter(|&x| x > 0.0)
                .collect();
            if v.is_empty() {
                return 1.0;
            }
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        })
        .collect();

    let profile = Profile { dists: &dists, y: &y };
    let mut best: Option<Candidate> = None;
    for &s in &opts.starts {
        for &r in &opts.noise_ratios {
            let ls: Vec<f64> = base.iter().map(|b| b * s).collect();
            if let Some(p) = profile.eval(&ls, r) {
                if best.as_ref().is_none_or(|b| p.lml > b.point.lml) {
                    best = Some(Candidate { ls, ratio: r, point: p });
                }
            }
        }
    }
    let Some(mut current) = best else {
        return Err(Error::NotPositiveDefinite { jitter: JITTER_MAX });
    };
    for _ in 0..opts.sweeps {
        let mut moves: Vec<(Vec<f64>, f64)> = Vec::new();
        for b in 0..nb {
            for f in [0.5, 2.0] {
                let mut ls = current.ls.clone();
                ls[b] *= f;
                moves.push((ls, current.ratio));
            }
        }
        for f in [0.1, 10.0] {
            let r = (current.ratio * f).clamp(NOISE_FLOOR, 1.0);
            if r != current.ratio {
                moves.push((current.ls.clone(), r));
            }
        }
        let mut improved = false;
        for (ls, r) in moves {
            if let Some(p) = profile.eval(&ls, r) {
                if p.lml > current.point.lml {
                    current = Candidate { ls, ratio: r, point: p };
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    let Candidate { ls, ratio, point } = current;
    let hyper = GpHyper::new(ls, point.signal_var, ratio * point.signal_var);
    GaussianProcess::condition(kernel.clone(), hyper, inputs, targets, offset, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pts(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|&x| DVector::from_element(1, x)).collect()
    }

    #[test]
    fn kernel_diagonal_is_signal_variance() {
        let k = BlockKernel::isotropic(3);
        let h = GpHyper::new(vec![0.7], 2.5, 0.0);
        let x = DVector::from_vec(vec![0.1, -2.0, 4.0]);
        assert_eq!(k.eval(&x, &x, &h), 2.5);
    }

    #[test]
    #[allow(clippy::single_range_in_vec_init)]
    fn block_layout_is_checked() {
        assert!(BlockKernel::new(vec![0..2, 3..4]).is_err());
        assert!(BlockKernel::new(vec![1..2]).is_err());
        assert!(BlockKernel::new(vec![0..2, 2..5]).is_ok());
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let h = GpHyper::new(vec![0.5], 1.3, 1e-4);
        let gp = GaussianProcess::new(BlockKernel::isotropic(1), h, pts(&[0.0, 0.4, 1.0]), &[1.0, -2.0, 0.5])
            .unwrap();
        let (m, v) = gp.predict(&DVector::from_element(1, 100.0));
        assert!(m.abs() < 1e-12);
        assert_relative_eq!(v, 1.3, epsilon = 1e-12);
    }

    #[test]
    fn duplicate_points_fit_with_noise_floor() {
        let gp = gp_fit(
            &BlockKernel::isotropic(1),
            pts(&[0.0, 0.0, 1.0, 2.0]),
            &[1.0, 2.0, 0.0, 1.0],
            &FitOptions::default(),
        )
        .unwrap();
        assert!(gp.hyper().noise_var >= NOISE_FLOOR * gp.hyper().signal_var * 0.999);
    }

    #[test]
    fn constant_targets_give_constant_mean() {
        let gp = gp_fit(
            &BlockKernel::isotropic(1),
            pts(&[0.0, 0.5, 1.0, 3.0]),
            &[4.2; 4],
            &FitOptions::default(),
        )
        .unwrap();
        for x in [-3.0, 0.25, 2.0, 50.0] {
            let (m, _) = gp.predict(&DVector::from_element(1, x));
            assert!((m - 4.2).abs() < 1e-6, "{m}");
        }
    }

    #[test]
    fn info_gain_grows_with_data() {
        let h = GpHyper::new(vec![0.5], 1.0, 0.1);
        let k = BlockKernel::isotropic(1);
        let a = GaussianProcess::new(k.clone(), h.clone(), pts(&[0.0, 1.0]), &[0.0, 0.0]).unwrap();
        let b = GaussianProcess::new(k, h, pts(&[0.0, 1.0, 2.0]), &[0.0; 3]).unwrap();
        assert!(a.info_gain() > 0.0 && b.info_gain() > a.info_gain());
    }
}
