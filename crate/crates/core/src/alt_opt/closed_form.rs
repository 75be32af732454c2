use nalgebra::{DMatrix, DVector};

use crate::channel::{effective_channels, ChannelSet, C64};
use crate::error::{invalid, Error, Result};

/// Stationary precoder of the Lagrangian for a single eavesdropper:
/// `W = (H diag(|c|²) H^H + γ I + κ h_e h_e^H)^{-1} H C^H`,
/// with `γ = μ + λ2` and `κ = λ + λ1`.
pub fn closed_form_precoder_ridge_nulling(
    cs: &ChannelSet,
    theta: &DVector<f64>,
    c: &DVector<C64>,
    gamma: f64,
    kappa: f64,
) -> Result<DMatrix<C64>> {
    let dims = cs.dims();
    if dims.k_b != 1 {
        return Err(invalid("k_b", "ridge-nulling form needs exactly one eavesdropper"));
    }
    if !(gamma > 0.0) {
        return Err(invalid("gamma", "must be positive"));
    }
    if !(kappa >= 0.0) {
        return Err(invalid("kappa", "must be nonnegative"));
    }
    if c.len() != dims.k_h {
        return Err(Error::DimensionMismatch(format!(
            "{} equalizers for {} users",
            c.len(),
            dims.k_h
        )));
    }
    let eff = effective_channels(cs, theta)?;
    let h = &eff.users;
    let he = &eff.eavs[0];

    let weighted = DMatrix::from_fn(dims.m, dims.k_h, |i, k| h[(i, k)] * c[k].norm_sqr());
    let mut a = weighted * h.adjoint();
    for i in 0..dims.m {
        a[(i, i)] += C64::from(gamma);
    }
    a += he * he.adjoint() * C64::from(kappa);

    let rhs = DMatrix::from_fn(dims.m, dims.k_h, |i, k| h[(i, k)] * c[k].conj());
    a.clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| a.lu().solve(&rhs))
        .ok_or_else(|| Error::Singular("ridge-nulling system".into()))
}

/// Precoder spanned by the left singular vectors of `H_eff = U Σ V^H`:
/// `W = U_{:,1:K_H} diag(√p) V^H`.
///
/// `power_alloc` holds one power per singular direction (uniform
/// `P_max / K_H` when `None`) and is scaled down if it exceeds `p_max`. The
/// trailing `V^H` rotation keeps column `k` paired with user `k`; it does not
/// change the column space or the total power.
pub fn closed_form_precoder_highsnr(
    cs: &ChannelSet,
    theta: &DVector<f64>,
    power_alloc: Option<&[f64]>,
    p_max: f64,
) -> Result<DMatrix<C64>> {
    let dims = cs.dims();
    if dims.k_h > dims.m {
        return Err(invalid("k_h", "needs K_H <= M"));
    }
    if !(p_max >= 0.0) {
        return Err(invalid("p_max", "must be nonnegative"));
    }
    let k = dims.k_h;
    let mut p: Vec<f64> = match power_alloc {
        Some(p) if p.len() != k => {
            return Err(Error::DimensionMismatch(format!(
                "{} powers for {k} users",
                p.len()
            )))
        }
        Some(p) if p.iter().any(|&x| !(x >= 0.0)) => {
            return Err(invalid("power_alloc", "powers must be nonnegative"))
        }
        Some(p) => p.to_vec(),
        None => vec![p_max / k as f64; k],
    };
    let total: f64 = p.iter().sum();
    if total > p_max {
        p.iter_mut().for_each(|x| *x *= p_max / total);
    }

    let eff = effective_channels(cs, theta)?;
    let svd = eff.users.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^H");
    let sv = &svd.singular_values;
    let tol = sv.max() * f64::EPSILON * dims.m as f64;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank < k {
        log::warn!("effective channel has rank {rank} < {k}; unused directions get no power");
    }

    let mut scaled = DMatrix::<C64>::zeros(dims.m, k);
    for j in 0..rank {
        scaled.set_column(j, &(u.column(j) * C64::from(p[j].sqrt())));
    }
    Ok(scaled * v_t)
}

/// `min Σ_k σ_k² / (‖h_eff,k‖² p_k + σ_k²)` over `Σ p_k ≤ P_max, p_k ≥ 0`.
///
/// For a budget price `ν` the KKT point is
/// `p_k = max(0, (√(σ_k² a_k / ν) − σ_k²) / a_k)`; `ν` is found by bisection
/// on the budget.
pub fn lower_bound_cost(cs: &ChannelSet, theta: &DVector<f64>, p_max: f64) -> Result<f64> {
    if !(p_max >= 0.0) {
        return Err(invalid("p_max", "must be nonnegative"));
    }
    let eff = effective_channels(cs, theta)?;
    let a: Vec<f64> = eff.users.column_iter().map(|h| h.norm_squared()).collect();
    let s2 = &cs.sigma2_user;
    let cost = |p: &[f64]| -> f64 {
        a.iter()
            .zip(s2)
            .zip(p)
            .map(|((&a, &s), &p)| s / (a * p + s))
            .sum()
    };
    let alloc = |nu: f64| -> Vec<f64> {
        a.iter()
            .zip(s2)
            .map(|(&a, &s)| {
                if a <= 0.0 {
                    0.0
                } else {
                    (((s * a / nu).sqrt() - s) / a).max(0.0)
                }
            })
            .collect()
    };
    if p_max == 0.0 || a.iter().all(|&x| x <= 0.0) {
        return Ok(cost(&vec![0.0; a.len()]));
    }

    // Above ν = max a_k / σ_k² no user gets power; shrink ν until the budget binds.
    let mut hi = a.iter().zip(s2).map(|(&a, &s)| a / s).fold(0.0, f64::max);
    let mut lo = hi;
    while alloc(lo).iter().sum::<f64>() < p_max {
        lo *= 0.5;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if alloc(mid).iter().sum::<f64>() > p_max {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(cost(&alloc(hi)))
}
