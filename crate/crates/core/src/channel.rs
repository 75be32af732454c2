//! Channels, designs and the physical-layer quantities built from them.
//!
//! The IRS reflection matrix is never stored densely: a [`Design`] carries the
//! phase vector `theta` and `Φ = diag(e^{jθ})` is applied elementwise, so the
//! unit-modulus constraint holds by construction.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::complex_gaussian;

pub type C64 = Complex<f64>;

/// System dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    /// BS transmit antennas.
    pub m: usize,
    /// IRS elements.
    pub n: usize,
    /// Honest users.
    pub k_h: usize,
    /// Byzantine users, which double as eavesdroppers.
    pub k_b: usize,
}

impl Dims {
    pub fn new(m: usize, n: usize, k_h: usize, k_b: usize) -> Result<Self> {
        let d = Dims { m, n, k_h, k_b };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("dims.m", "must be positive"));
        }
        if self.n == 0 {
            return Err(invalid("dims.n", "must be positive"));
        }
        if self.k_h == 0 {
            return Err(invalid("dims.k_h", "must be positive"));
        }
        Ok(())
    }

    /// Total number of secondary users.
    pub fn users(&self) -> usize {
        self.k_h + self.k_b
    }

    /// Whether the honest-majority condition `K_B <= floor(K/2) - 1` holds.
    pub fn sensing_resilient(&self) -> bool {
        self.k_b < self.users() / 2
    }
}

/// Receiver noise variances (linear power).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseVariances {
    pub user: f64,
    pub eavesdropper: f64,
}

impl Default for NoiseVariances {
    fn default() -> Self {
        NoiseVariances {
            user: 1.0,
            eavesdropper: 1.0,
        }
    }
}

/// One realization of every channel in the system.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// BS→IRS, `N × M`.
    pub bs_irs: DMatrix<C64>,
    /// IRS→honest user `k`, each of length `N`.
    pub irs_user: Vec<DVector<C64>>,
    /// IRS→eavesdropper `e`, each of length `N`.
    pub irs_eav: Vec<DVector<C64>>,
    pub sigma2_user: Vec<f64>,
    pub sigma2_eav: Vec<f64>,
}

impl ChannelSet {
    /// Draws every channel entry i.i.d. from CN(0, 1).
    pub fn sample<R: Rng + ?Sized>(dims: &Dims, noise: &NoiseVariances, rng: &mut R) -> Self {
        let bs_irs = DMatrix::from_fn(dims.n, dims.m, |_, _| complex_gaussian(rng, 1.0));
        let irs_user = (0..dims.k_h)
            .map(|_| DVector::from_fn(dims.n, |_, _| complex_gaussian(rng, 1.0)))
            .collect();
        let irs_eav = (0..dims.k_b)
            .map(|_| DVector::from_fn(dims.n, |_, _| complex_gaussian(rng, 1.0)))
            .collect();
        ChannelSet {
            bs_irs,
            irs_user,
            irs_eav,
            sigma2_user: vec![noise.user; dims.k_h],
            sigma2_eav: vec![noise.eavesdropper; dims.k_b],
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            m: self.bs_irs.ncols(),
            n: self.bs_irs.nrows(),
            k_h: self.irs_user.len(),
            k_b: self.irs_eav.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        d.validate()?;
        if self.irs_user.iter().chain(&self.irs_eav).any(|v| v.len() != d.n) {
            return Err(Error::DimensionMismatch(format!(
                "IRS channel vectors must have length N = {}",
                d.n
            )));
        }
        if self.sigma2_user.len() != d.k_h || self.sigma2_eav.len() != d.k_b {
            return Err(Error::DimensionMismatch(
                "one noise variance per receiver".into(),
            ));
        }
        if self
            .sigma2_user
            .iter()
            .chain(&self.sigma2_eav)
            .any(|&s| !(s > 0.0))
        {
            return Err(invalid("sigma2", "noise variances must be positive"));
        }
        Ok(())
    }

    /// Multiplies every IRS→receiver channel by a common scalar.
    pub fn rotate_receivers(&self, factor: C64) -> Self {
        let mut out = self.clone();
        out.irs_user.iter_mut().for_each(|v| *v *= factor);
        out.irs_eav.iter_mut().for_each(|v| *v *= factor);
        out
    }
}

/// Decision variables: IRS phases, precoder and equalizers.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    /// IRS phases, `N` entries.
    pub theta: DVector<f64>,
    /// Precoder `M × K_H`, column `k` serves honest user `k`.
    pub w: DMatrix<C64>,
    /// Equalizer coefficients, one per honest user.
    pub c: DVector<C64>,
}

impl Design {
    pub fn zeros(dims: &Dims) -> Self {
        Design {
            theta: DVector::zeros(dims.n),
            w: DMatrix::zeros(dims.m, dims.k_h),
            c: DVector::zeros(dims.k_h),
        }
    }

    /// Diagonal of Φ.
    pub fn reflection(&self) -> DVector<C64> {
        phase_diagonal(&self.theta)
    }

    pub fn power(&self) -> f64 {
        self.w.norm_squared()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
            && self.w.iter().all(|x| x.re.is_finite() && x.im.is_finite())
            && self.c.iter().all(|x| x.re.is_finite() && x.im.is_finite())
    }

    pub(crate) fn check(&self, dims: &Dims) -> Result<()> {
        if self.theta.len() != dims.n
            || self.w.nrows() != dims.m
            || self.w.ncols() != dims.k_h
            || self.c.len() != dims.k_h
        {
            return Err(Error::DimensionMismatch(format!(
                "design (θ: {}, W: {}×{}, c: {}) vs dims {:?}",
                self.theta.len(),
                self.w.nrows(),
                self.w.ncols(),
                self.c.len(),
                dims
            )));
        }
        Ok(())
    }
}

pub fn phase_diagonal(theta: &DVector<f64>) -> DVector<C64> {
    theta.map(|t| Complex::from_polar(1.0, t))
}

/// Objective weights and constraint caps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    /// Soft leakage penalty λ.
    pub lambda: f64,
    /// Power regularization μ.
    pub mu: f64,
    /// Leakage cap Γ_leak.
    pub gamma_leak: f64,
    /// Transmit power budget.
    pub p_max: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            lambda: 1.0,
            mu: 0.01,
            gamma_leak: 0.1,
            p_max: 1.0,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(invalid("weights.lambda", "must be nonnegative"));
        }
        if !(self.mu >= 0.0) {
            return Err(invalid("weights.mu", "must be nonnegative"));
        }
        if !(self.gamma_leak > 0.0) {
            return Err(invalid("weights.gamma_leak", "must be positive"));
        }
        if !(self.p_max > 0.0) {
            return Err(invalid("weights.p_max", "must be positive"));
        }
        Ok(())
    }
}

/// Effective BS-side channels for a fixed IRS configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    /// `M × K_H`, column `k` is `H^H Φ^H h_k`.
    pub users: DMatrix<C64>,
    /// `H^H Φ^H g_e` for each eavesdropper.
    pub eavs: Vec<DVector<C64>>,
}

/// Computes `H^H Φ^H h_k` for all honest users and `H^H Φ^H g_e` for all eavesdroppers.
pub fn effective_channels(cs: &ChannelSet, theta: &DVector<f64>) -> Result<EffectiveChannels> {
    let dims = cs.dims();
    if theta.len() != dims.n {
        return Err(Error::DimensionMismatch(format!(
            "theta has {} entries, IRS has {}",
            theta.len(),
            dims.n
        )));
    }
    if cs.irs_user.iter().chain(&cs.irs_eav).any(|v| v.len() != dims.n) {
        return Err(Error::DimensionMismatch(
            "IRS channel vector length differs from N".into(),
        ));
    }
    Ok(effective_unchecked(cs, &phase_diagonal(theta)))
}

pub(crate) fn effective_unchecked(cs: &ChannelSet, phi: &DVector<C64>) -> EffectiveChannels {
    let through = |v: &DVector<C64>| -> DVector<C64> {
        let reflected = v.zip_map(phi, |x, p| x * p.conj());
        cs.bs_irs.ad_mul(&reflected)
    };
    let cols: Vec<DVector<C64>> = cs.irs_user.iter().map(through).collect();
    let users = if cols.is_empty() {
        DMatrix::zeros(cs.bs_irs.ncols(), 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    EffectiveChannels {
        users,
        eavs: cs.irs_eav.iter().map(through).collect(),
    }
}

impl EffectiveChannels {
    /// `S[k, j] = h_eff,k^H w_j`.
    pub fn gains(&self, w: &DMatrix<C64>) -> DMatrix<C64> {
        self.users.ad_mul(w)
    }

    /// Per-eavesdropper signal leakage `Σ_k |h_eff,e^H w_k|²`.
    pub fn leakage(&self, w: &DMatrix<C64>) -> Vec<f64> {
        self.eavs
            .iter()
            .map(|he| w.ad_mul(he).norm_squared())
            .collect()
    }
}

/// Per-user MSE from a precomputed gain matrix.
pub(crate) fn mse_from_gains(gains: &DMatrix<C64>, c: &DVector<C64>, sigma2: &[f64], k: usize) -> f64 {
    let received: f64 = gains.row(k).iter().map(|g| g.norm_sqr()).sum::<f64>() + sigma2[k];
    c[k].norm_sqr() * received - 2.0 * (c[k] * gains[(k, k)]).re + 1.0
}

fn check_user(cs: &ChannelSet, k: usize) -> Result<()> {
    if k >= cs.irs_user.len() {
        return Err(Error::IndexOutOfRange {
            index: k,
            len: cs.irs_user.len(),
        });
    }
    Ok(())
}

/// `E|c_k y_k − s_k|²` for honest user `k` (zero-based).
pub fn mse_k(cs: &ChannelSet, d: &Design, k: usize) -> Result<f64> {
    check_user(cs, k)?;
    d.check(&cs.dims())?;
    let eff = effective_unchecked(cs, &d.reflection());
    Ok(mse_from_gains(&eff.gains(&d.w), &d.c, &cs.sigma2_user, k))
}

/// Signal component of the power received by each eavesdropper.
#[derive(Debug, Clone, PartialEq)]
pub struct Leakage {
    pub per_eav: Vec<f64>,
    pub total: f64,
}

pub fn leakage_signal_power(cs: &ChannelSet, d: &Design) -> Result<Leakage> {
    d.check(&cs.dims())?;
    let per_eav = effective_unchecked(cs, &d.reflection()).leakage(&d.w);
    let total = per_eav.iter().sum();
    Ok(Leakage { per_eav, total })
}

/// Post-equalization SINR of honest user `k`.
pub fn sinr_k(cs: &ChannelSet, d: &Design, k: usize) -> Result<f64> {
    check_user(cs, k)?;
    d.check(&cs.dims())?;
    let gains = effective_unchecked(cs, &d.reflection()).gains(&d.w);
    Ok(sinr_from_gains(&gains, &cs.sigma2_user, k))
}

pub(crate) fn sinr_from_gains(gains: &DMatrix<C64>, sigma2: &[f64], k: usize) -> f64 {
    let signal = gains[(k, k)].norm_sqr();
    let interference: f64 = gains
        .row(k)
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, g)| g.norm_sqr())
        .sum();
    signal / (interference + sigma2[k])
}

/// MMSE equalizer for the current `(θ, W)`.
///
/// `c_k = (h_eff,k^H w_k)^* / (Σ_j |h_eff,k^H w_j|² + σ_k²)`, the minimizer of
/// [`mse_k`] under the `c_k · y_k` receiver convention.
pub fn mmse_equalizer(cs: &ChannelSet, d: &Design) -> Result<DVector<C64>> {
    d.check(&cs.dims())?;
    let eff = effective_unchecked(cs, &d.reflection());
    Ok(mmse_from_gains(&eff.gains(&d.w), &cs.sigma2_user))
}

pub(crate) fn mmse_from_gains(gains: &DMatrix<C64>, sigma2: &[f64]) -> DVector<C64> {
    DVector::from_fn(gains.nrows(), |k, _| {
        let received: f64 = gains.row(k).iter().map(|g| g.norm_sqr()).sum::<f64>() + sigma2[k];
        gains[(k, k)].conj() / received
    })
}

/// Everything the objective and constraints need, computed in one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mse: Vec<f64>,
    pub sum_mse: f64,
    pub leakage: f64,
    pub power: f64,
    pub objective: f64,
    /// `Σ_e P_e − Γ_leak`.
    pub g_leak: f64,
    /// `‖W‖_F² − P_max`.
    pub g_power: f64,
}

pub fn evaluate(cs: &ChannelSet, d: &Design, w: &Weights) -> Result<Evaluation> {
    d.check(&cs.dims())?;
    let eff = effective_unchecked(cs, &d.reflection());
    Ok(evaluate_with(&eff, cs, d, w))
}

pub(crate) fn evaluate_with(
    eff: &EffectiveChannels,
    cs: &ChannelSet,
    d: &Design,
    w: &Weights,
) -> Evaluation {
    let gains = eff.gains(&d.w);
    let mse: Vec<f64> = (0..gains.nrows())
        .map(|k| mse_from_gains(&gains, &d.c, &cs.sigma2_user, k))
        .collect();
    let sum_mse = mse.iter().sum();
    let leakage = eff.leakage(&d.w).iter().sum();
    let power = d.power();
    Evaluation {
        objective: sum_mse + w.lambda * leakage + w.mu * power,
        g_leak: leakage - w.gamma_leak,
        g_power: power - w.p_max,
        mse,
        sum_mse,
        leakage,
        power,
    }
}

/// `Σ_k MSE_k + λ Σ_e P_e + μ ‖W‖_F²`.
pub fn objective(cs: &ChannelSet, d: &Design, w: &Weights) -> Result<f64> {
    Ok(evaluate(cs, d, w)?.objective)
}

/// Constraint values `(g1, g2)`: leakage minus cap, power minus budget.
/// The design is feasible iff both are ≤ 0.
pub fn constraint_values(cs: &ChannelSet, d: &Design, w: &Weights) -> Result<(f64, f64)> {
    let e = evaluate(cs, d, w)?;
    Ok((e.g_leak, e.g_power))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn scalar_set(h: C64, hu: C64, g: Option<C64>) -> ChannelSet {
        ChannelSet {
            bs_irs: DMatrix::from_element(1, 1, h),
            irs_user: vec![DVector::from_element(1, hu)],
            irs_eav: g.map(|g| vec![DVector::from_element(1, g)]).unwrap_or_default(),
            sigma2_user: vec![1.0],
            sigma2_eav: if g.is_some() { vec![1.0] } else { vec![] },
        }
    }

    fn unit_design(c: f64) -> Design {
        Design {
            theta: DVector::from_element(1, 0.0),
            w: DMatrix::from_element(1, 1, C64::new(1.0, 0.0)),
            c: DVector::from_element(1, C64::new(c, 0.0)),
        }
    }

    fn one() -> C64 {
        C64::new(1.0, 0.0)
    }

    #[test]
    fn sampling_is_deterministic_and_shaped() {
        let dims = Dims::new(3, 5, 2, 1).unwrap();
        let a = ChannelSet::sample(&dims, &NoiseVariances::default(), &mut rng_from_seed(9));
        let b = ChannelSet::sample(&dims, &NoiseVariances::default(), &mut rng_from_seed(9));
        assert_eq!(a, b);
        assert_eq!(a.dims(), dims);
        a.validate().unwrap();

        let tiny = Dims::new(1, 1, 1, 0).unwrap();
        let s = ChannelSet::sample(&tiny, &NoiseVariances::default(), &mut rng_from_seed(1));
        assert_eq!(s.bs_irs.shape(), (1, 1));
        assert_eq!(s.irs_user.len(), 1);
        assert!(s.irs_eav.is_empty());
    }

    #[test]
    fn sampled_entries_have_unit_second_moment() {
        let dims = Dims::new(100, 100, 1, 0).unwrap();
        let s = ChannelSet::sample(&dims, &NoiseVariances::default(), &mut rng_from_seed(3));
        let m = s.bs_irs.iter().map(|x| x.norm_sqr()).sum::<f64>() / 1e4;
        assert!((m - 1.0).abs() < 0.05, "second moment {m}");
        let re_var = s.bs_irs.iter().map(|x| x.re * x.re).sum::<f64>() / 1e4;
        assert!((re_var - 0.5).abs() < 0.05);
    }

    #[test]
    fn scalar_effective_channel_and_phase_conjugation() {
        let cs = scalar_set(one(), one(), None);
        let e = effective_channels(&cs, &DVector::from_element(1, 0.0)).unwrap();
        assert_relative_eq!(e.users[(0, 0)].re, 1.0);
        let e = effective_channels(&cs, &DVector::from_element(1, PI)).unwrap();
        assert_relative_eq!(e.users[(0, 0)].re, -1.0, epsilon = 1e-15);
        assert!(e.users[(0, 0)].im.abs() < 1e-15);
        assert!(effective_channels(&cs, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn effective_channel_matches_direct_sum() {
        let dims = Dims::new(2, 4, 2, 1).unwrap();
        let mut rng = rng_from_seed(11);
        let cs = ChannelSet::sample(&dims, &NoiseVariances::default(), &mut rng);
        let theta = DVector::from_fn(4, |i, _| 0.7 * i as f64 + 0.3);
        let e = effective_channels(&cs, &theta).unwrap();
        for k in 0..2 {
            for m in 0..2 {
                let mut acc = C64::new(0.0, 0.0);
                for n in 0..4 {
                    acc += cs.bs_irs[(n, m)].conj()
                        * C64::from_polar(1.0, -theta[n])
                        * cs.irs_user[k][n];
                }
                assert_relative_eq!(acc.re, e.users[(m, k)].re, epsilon = 1e-12);
                assert_relative_eq!(acc.im, e.users[(m, k)].im, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn scalar_mse_and_mmse() {
        let cs = scalar_set(one(), one(), None);
        assert_relative_eq!(mse_k(&cs, &unit_design(1.0), 0).unwrap(), 1.0);
        assert_relative_eq!(mse_k(&cs, &unit_design(0.5), 0).unwrap(), 0.5);
        let c = mmse_equalizer(&cs, &unit_design(1.0)).unwrap();
        assert_relative_eq!(c[0].re, 0.5);
        assert_relative_eq!(sinr_k(&cs, &unit_design(1.0), 0).unwrap(), 1.0);
        assert!(mse_k(&cs, &unit_design(1.0), 1).is_err());
    }

    #[test]
    fn mmse_with_unit_interference() {
        // signal 1, one interferer with gain 1, noise 1 → c* = 1/3
        let cs = ChannelSet {
            bs_irs: DMatrix::from_element(1, 1, one()),
            irs_user: vec![DVector::from_element(1, one()), DVector::from_element(1, one())],
            irs_eav: vec![],
            sigma2_user: vec![1.0, 1.0],
            sigma2_eav: vec![],
        };
        let d = Design {
            theta: DVector::zeros(1),
            w: DMatrix::from_element(1, 2, one()),
            c: DVector::zeros(2),
        };
        let c = mmse_equalizer(&cs, &d).unwrap();
        assert_relative_eq!(c[0].re, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_precoder_column_gives_zero_sinr() {
        let cs = scalar_set(one(), one(), None);
        let mut d = unit_design(1.0);
        d.w[(0, 0)] = C64::new(0.0, 0.0);
        assert_eq!(sinr_k(&cs, &d, 0).unwrap(), 0.0);
    }

    #[test]
    fn leakage_cases() {
        let cs = scalar_set(one(), one(), None);
        assert_eq!(leakage_signal_power(&cs, &unit_design(1.0)).unwrap().total, 0.0);
        let cs = scalar_set(one(), one(), Some(one()));
        let l = leakage_signal_power(&cs, &unit_design(1.0)).unwrap();
        assert_relative_eq!(l.per_eav[0], 1.0);
    }

    #[test]
    fn objective_and_constraint_examples() {
        let cs = scalar_set(one(), one(), Some(one()));
        let w = Weights {
            lambda: 1.0,
            mu: 1.0,
            gamma_leak: 2.0,
            p_max: 2.0,
        };
        assert_relative_eq!(objective(&cs, &unit_design(1.0), &w).unwrap(), 3.0);
        let (g1, g2) = constraint_values(&cs, &unit_design(1.0), &w).unwrap();
        assert_relative_eq!(g1, -1.0);
        assert_relative_eq!(g2, -1.0);

        let zero = Design::zeros(&cs.dims());
        let (g1, g2) = constraint_values(&cs, &zero, &w).unwrap();
        assert_eq!((g1, g2), (-2.0, -2.0));

        let plain = Weights {
            lambda: 0.0,
            mu: 0.0,
            ..w
        };
        let e = evaluate(&cs, &unit_design(1.0), &plain).unwrap();
        assert_relative_eq!(e.objective, e.sum_mse);
    }

    #[test]
    fn unit_modulus_is_exact() {
        let theta = DVector::from_fn(64, |i, _| 0.1 * (i as f64).powi(2) - 3.0);
        for p in phase_diagonal(&theta).iter() {
            assert!((p.norm() - 1.0).abs() <= f64::EPSILON);
        }
    }

    #[test]
    fn dims_validation() {
        assert!(Dims::new(0, 1, 1, 0).is_err());
        assert!(Dims::new(1, 0, 1, 0).is_err());
        assert!(Dims::new(1, 1, 0, 0).is_err());
        assert!(Dims::new(8, 64, 8, 3).unwrap().sensing_resilient());
        assert!(!Dims::new(8, 64, 2, 3).unwrap().sensing_resilient());
    }
}
