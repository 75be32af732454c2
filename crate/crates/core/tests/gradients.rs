mod common;

use common::{active_dual, gradient_errors, random_instance};
use nalgebra::{DMatrix, DVector};
use secure_irs::alt_opt::{
    closed_form_precoder_ridge_nulling, grad_theta, lagrangian_grad_w, DualState,
};
use secure_irs::channel::{ChannelSet, Design, Dims, Weights, C64};

#[test]
fn analytic_gradients_match_central_differences() {
    let w = Weights::default();
    for seed in 0..20 {
        let dims = Dims::new(3 + seed as usize % 3, 4 + seed as usize % 5, 2, 1 + seed as usize % 2).unwrap();
        let (cs, d) = random_instance(dims, seed);
        let dual = active_dual(seed);
        let [e_w, e_c, e_t] = gradient_errors(&cs, &d, &w, &dual);
        assert!(e_w <= 1e-6, "seed {seed}: W rel err {e_w:e}");
        assert!(e_c <= 1e-6, "seed {seed}: c rel err {e_c:e}");
        assert!(e_t <= 1e-5, "seed {seed}: θ rel err {e_t:e}");
    }
}

#[test]
fn gradients_match_with_inactive_penalties() {
    let w = Weights {
        gamma_leak: 1e6,
        p_max: 1e6,
        ..Weights::default()
    };
    for seed in 100..105 {
        let (cs, d) = random_instance(Dims::new(4, 6, 3, 2).unwrap(), seed);
        let errs = gradient_errors(&cs, &d, &w, &DualState::default());
        assert!(errs.iter().all(|&e| e <= 1e-5), "{errs:?}");
    }
}

#[test]
fn symmetric_single_element_point_is_stationary_in_theta() {
    // N = 1, real positive channels, θ = 0 and real positive W and c: every
    // cascaded gain is real, so rotating the single phase moves away from
    // the aligned point symmetrically.
    let one = C64::from(1.0);
    let cs = ChannelSet {
        bs_irs: DMatrix::from_element(1, 2, C64::from(0.8)),
        irs_user: vec![DVector::from_element(1, C64::from(1.3))],
        irs_eav: vec![DVector::from_element(1, C64::from(0.4))],
        sigma2_user: vec![1.0],
        sigma2_eav: vec![1.0],
    };
    let d = Design {
        theta: DVector::zeros(1),
        w: DMatrix::from_element(2, 1, one * 0.5),
        c: DVector::from_element(1, one * 0.6),
    };
    let w = Weights::default();
    let g = grad_theta(&cs, &d, &w, &DualState::default()).unwrap();
    assert!(g[0].abs() < 1e-12, "{}", g[0]);
    let errs = gradient_errors(&cs, &d, &w, &DualState::default());
    assert!(errs[2] < 1e-5 || g[0].abs() < 1e-12);
}

#[test]
fn ridge_nulling_precoder_zeroes_the_stationarity_residual() {
    for seed in 0..10 {
        let (cs, mut d) = random_instance(Dims::new(4, 6, 3, 1).unwrap(), 300 + seed);
        let w = Weights::default();
        let (l1, l2) = (0.3 + seed as f64 * 0.1, 0.2);
        d.w = closed_form_precoder_ridge_nulling(&cs, &d.theta, &d.c, w.mu + l2, w.lambda + l1)
            .unwrap();
        let residual = lagrangian_grad_w(&cs, &d, &w, l1, l2).unwrap();
        let eff = secure_irs::channel::effective_channels(&cs, &d.theta).unwrap();
        let rhs = DMatrix::from_fn(4, 3, |i, k| eff.users[(i, k)] * d.c[k].conj());
        assert!(residual.norm() <= 1e-8 * 2.0 * rhs.norm(), "seed {seed}");
    }
}
