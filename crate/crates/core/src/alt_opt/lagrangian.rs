use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::{
    effective_unchecked, evaluate_with, ChannelSet, Design, EffectiveChannels, Weights, C64,
};
use crate::error::{invalid, Result};

/// Multipliers for the leakage (`lambda1`) and power (`lambda2`) constraints
/// and the penalty coefficient `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualState {
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho: f64,
}

impl Default for DualState {
    fn default() -> Self {
        DualState {
            lambda1: 0.0,
            lambda2: 0.0,
            rho: 1.0,
        }
    }
}

impl DualState {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(invalid("dual.lambda", "multipliers must be nonnegative"));
        }
        if !(self.rho > 0.0) {
            return Err(invalid("dual.rho", "must be positive"));
        }
        Ok(())
    }

    /// Multipliers seen by the gradient, `max(0, λ_i + ρ g_i)`.
    pub fn effective(&self, g1: f64, g2: f64) -> (f64, f64) {
        (
            (self.lambda1 + self.rho * g1).max(0.0),
            (self.lambda2 + self.rho * g2).max(0.0),
        )
    }
}

/// Penalty contributed by one inequality constraint.
///
/// This is the clipped form `(ρ/2)[max(0, g + λ/ρ)² − (λ/ρ)²]`. It coincides
/// with `λ g + (ρ/2) g²` whenever `λ + ρ g ≥ 0` and stops rewarding or
/// penalizing slack once the constraint is comfortably satisfied. Its
/// derivative in `g` is exactly `max(0, λ + ρ g)`.
pub fn constraint_penalty(g: f64, lambda: f64, rho: f64) -> f64 {
    let shift = lambda / rho;
    0.5 * rho * ((g + shift).max(0.0).powi(2) - shift * shift)
}

/// `F + Σ_i penalty(g_i, λ_i)` for the current design.
pub fn augmented_lagrangian(cs: &ChannelSet, d: &Design, w: &Weights, dual: &DualState) -> Result<f64> {
    d.check(&cs.dims())?;
    let eff = effective_unchecked(cs, &d.reflection());
    Ok(lagrangian_with(&eff, cs, d, w, dual))
}

pub(crate) fn lagrangian_with(
    eff: &EffectiveChannels,
    cs: &ChannelSet,
    d: &Design,
    w: &Weights,
    dual: &DualState,
) -> f64 {
    let e = evaluate_with(eff, cs, d, w);
    e.objective
        + constraint_penalty(e.g_leak, dual.lambda1, dual.rho)
        + constraint_penalty(e.g_power, dual.lambda2, dual.rho)
}

fn effective_multipliers(
    eff: &EffectiveChannels,
    cs: &ChannelSet,
    d: &Design,
    w: &Weights,
    dual: &DualState,
) -> (f64, f64) {
    let e = evaluate_with(eff, cs, d, w);
    dual.effective(e.g_leak, e.g_power)
}

/// Gradient of the augmented Lagrangian in `W`, returned as `2 ∂L/∂W*`, so
/// that its real and imaginary parts are the derivatives with respect to
/// `Re W` and `Im W`.
pub fn grad_w(cs: &ChannelSet, d: &Design, w: &Weights, dual: &DualState) -> Result<DMatrix<C64>> {
    d.check(&cs.dims())?;
    let eff = effective_unchecked(cs, &d.reflection());
    let (l1, l2) = effective_multipliers(&eff, cs, d, w, dual);
    Ok(grad_w_with(&eff, d, w, l1, l2))
}

/// Gradient in `W` of the plain Lagrangian
/// `F + λ1 g1 + λ2 g2` at fixed multipliers.
pub fn lagrangian_grad_w(
    cs: &ChannelSet,
    d: &Design,
    w: &Weights,
    lambda1: f64,
    lambda2: f64,
) -> Result<DMatrix<C64>> {
    d.check(&cs.dims())?;
    let eff = effective_unchecked(cs, &d.reflection());
    Ok(grad_w_with(&eff, d, w, lambda1, lambda2))
}

pub(crate) fn grad_w_with(
    eff: &EffectiveChannels,
    d: &Design,
    w: &Weights,
    lambda1: f64,
    lambda2: f64,
) -> DMatrix<C64> {
    let h = &eff.users;
    let abs_c2 = DVector::from_iterator(d.c.len(), d.c.iter().map(|c| C64::from(c.norm_sqr())));
    // H diag(|c|²) H^H W without forming the M×M Gram matrix.
    let gains = h.ad_mul(&d.w);
    let weighted = DMatrix::from_fn(gains.nrows(), gains.ncols(), |k, j| abs_c2[k] * gains[(k, j)]);
    let mut out = h * weighted;
    for (k, mut col) in out.column_iter_mut().enumerate() {
        col.axpy(-d.c[k].conj(), &h.column(k), C64::from(1.0));
    }
    out *= C64::from(2.0);
    out += &d.w * C64::from(2.0 * (w.mu + lambda2));
    let kappa = 2.0 * (w.lambda + lambda1);
    if kappa != 0.0 {
        for he in &eff.eavs {
            let proj = d.w.ad_mul(he).map(|z| z.conj());
            out.ger(C64::from(kappa), he, &proj, C64::from(1.0));
        }
    }
    out
}

/// Gradient in `c`, entry `k` being
/// `∂L/∂c_k* = c_k (Σ_j |h_eff,k^H w_j|² + σ_k²) − (h_eff,k^H w_k)^*`.
/// The descent step is `c ← c − γ · grad`; as a real gradient over
/// `(Re c, Im c)` it is twice this value.
pub fn grad_c(cs: &ChannelSet, d: &Design) -> Result<DVector<C64>> {
    d.check(&cs.dims())?;
    let eff = effective_unchecked(cs, &d.reflection());
    Ok(grad_c_with(&eff, cs, d))
}

pub(crate) fn grad_c_with(eff: &EffectiveChannels, cs: &ChannelSet, d: &Design) -> DVector<C64> {
    let gains = eff.gains(&d.w);
    DVector::from_fn(d.c.len(), |k, _| {
        let received: f64 = gains.row(k).iter().map(|g| g.norm_sqr()).sum::<f64>() + cs.sigma2_user[k];
        d.c[k] * received - gains[(k, k)].conj()
    })
}

/// Derivative of the augmented Lagrangian with respect to each phase `θ_n`.
pub fn grad_theta(cs: &ChannelSet, d: &Design, w: &Weights, dual: &DualState) -> Result<DVector<f64>> {
    d.check(&cs.dims())?;
    let eff = effective_unchecked(cs, &d.reflection());
    let (l1, _) = effective_multipliers(&eff, cs, d, w, dual);
    Ok(grad_theta_with(cs, d, w.lambda + l1))
}

/// `kappa` is the total weight on the leakage term (soft penalty plus the
/// effective leakage multiplier).
pub(crate) fn grad_theta_with(cs: &ChannelSet, d: &Design, kappa: f64) -> DVector<f64> {
    let n = d.theta.len();
    let phi = d.reflection();
    // b_j = H w_j, one column per stream.
    let b = &cs.bs_irs * &d.w;
    let mut grad = DVector::<f64>::zeros(n);

    for (k, hk) in cs.irs_user.iter().enumerate() {
        let u = hk.zip_map(&phi, |h, p| h.conj() * p);
        let s = b.tr_mul(&u); // s_j = Σ_n u_n b_jn
        let ck2 = d.c[k].norm_sqr();
        for i in 0..n {
            let mut q = C64::from(0.0);
            for j in 0..b.ncols() {
                q += s[j].conj() * b[(i, j)];
            }
            q = q * ck2 - d.c[k] * b[(i, k)];
            grad[i] -= 2.0 * (u[i] * q).im;
        }
    }

    if kappa != 0.0 {
        for ge in &cs.irs_eav {
            let v = ge.zip_map(&phi, |g, p| g.conj() * p);
            let t = b.tr_mul(&v);
            for i in 0..n {
                let mut q = C64::from(0.0);
                for j in 0..b.ncols() {
                    q += t[j].conj() * b[(i, j)];
                }
                grad[i] -= 2.0 * kappa * (v[i] * q).im;
            }
        }
    }
    grad
}

/// Projected dual ascent `λ_i ← max(0, λ_i + ρ g_i)`.
pub fn dual_update(dual: &DualState, g1: f64, g2: f64) -> DualState {
    let (lambda1, lambda2) = dual.effective(g1, g2);
    DualState {
        lambda1,
        lambda2,
        rho: dual.rho,
    }
}
