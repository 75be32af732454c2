use serde::Serialize;

use crate::channel::{effective_channels, ChannelSet, Design};
use crate::error::{invalid, Error, Result};
use crate::sensing::Hypothesis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionRates {
    pub pd: f64,
    pub pfa: f64,
    pub h1_trials: usize,
    pub h0_trials: usize,
}

/// Detection and false-alarm rates of `decisions` against `truth`.
pub fn metric_detection(decisions: &[Hypothesis], truth: &[Hypothesis]) -> Result<DetectionRates> {
    if decisions.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} decisions for {} trials",
            decisions.len(),
            truth.len()
        )));
    }
    let (mut h1, mut h0, mut hits, mut alarms) = (0usize, 0usize, 0usize, 0usize);
    for (d, t) in decisions.iter().zip(truth) {
        let said_h1 = *d == Hypothesis::H1;
        match t {
            Hypothesis::H1 => {
                h1 += 1;
                hits += said_h1 as usize;
            }
            Hypothesis::H0 => {
                h0 += 1;
                alarms += said_h1 as usize;
            }
        }
    }
    if h1 == 0 {
        return Err(Error::EmptyClass("H1"));
    }
    if h0 == 0 {
        return Err(Error::EmptyClass("H0"));
    }
    Ok(DetectionRates {
        pd: hits as f64 / h1 as f64,
        pfa: alarms as f64 / h0 as f64,
        h1_trials: h1,
        h0_trials: h0,
    })
}

/// Secure power-transfer ratio `ζ = P_harv / (P_tx · P_leak)`.
///
/// `P_harv` is the total signal power reaching the honest users,
/// `Σ_k Σ_j |h_eff,k^H w_j|²`. Returns `+∞` when nothing leaks.
pub fn metric_wpt_zeta(cs: &ChannelSet, d: &Design) -> Result<f64> {
    let p_tx = d.power();
    if p_tx <= 0.0 {
        return Err(invalid("design.w", "zero transmit power"));
    }
    let eff = effective_channels(cs, &d.theta)?;
    if d.w.shape() != (cs.dims().m, cs.dims().k_h) {
        return Err(Error::DimensionMismatch("precoder shape".into()));
    }
    let p_harv = eff.gains(&d.w).norm_squared();
    let p_leak: f64 = eff.leakage(&d.w).iter().sum();
    if p_leak == 0.0 {
        log::debug!("zero leakage, ζ is unbounded");
        return Ok(f64::INFINITY);
    }
    Ok(p_harv / (p_tx * p_leak))
}

/// Sample mean and standard error (zero for a single sample).
pub fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
