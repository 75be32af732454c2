#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use secure_irs::alt_opt::{augmented_lagrangian, grad_c, grad_theta, grad_w, DualState};
use secure_irs::channel::{ChannelSet, Design, Dims, NoiseVariances, Weights, C64};
use secure_irs::rng::{complex_gaussian, rng_from_seed};

pub const FD_STEP: f64 = 1e-6;

/// Random channels and a random (generally infeasible) design.
pub fn random_instance(dims: Dims, seed: u64) -> (ChannelSet, Design) {
    let mut rng = rng_from_seed(seed);
    let cs = ChannelSet::sample(&dims, &NoiseVariances::default(), &mut rng);
    let d = Design {
        theta: DVector::from_fn(dims.n, |_, _| rng.random_range(0.0..std::f64::consts::TAU)),
        w: DMatrix::from_fn(dims.m, dims.k_h, |_, _| complex_gaussian(&mut rng, 0.2)),
        c: DVector::from_fn(dims.k_h, |_, _| complex_gaussian(&mut rng, 0.1)),
    };
    (cs, d)
}

/// Multipliers that leave both penalty terms active at `d`.
pub fn active_dual(seed: u64) -> DualState {
    let mut rng = rng_from_seed(seed ^ 0xD0A1);
    DualState {
        lambda1: rng.random_range(0.5..2.0),
        lambda2: rng.random_range(0.5..2.0),
        rho: rng.random_range(0.5..2.0),
    }
}

fn central<F: Fn(&Design) -> f64>(f: &F, plus: Design, minus: Design) -> f64 {
    (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
    num / den
}

/// Relative errors of the analytic gradients in W, c and θ against central
/// differences of the augmented Lagrangian.
pub fn gradient_errors(cs: &ChannelSet, d: &Design, w: &Weights, dual: &DualState) -> [f64; 3] {
    let f = |x: &Design| augmented_lagrangian(cs, x, w, dual).unwrap();

    let gw = grad_w(cs, d, w, dual).unwrap();
    let (mut fd, mut an) = (Vec::new(), Vec::new());
    for idx in 0..gw.len() {
        for (unit, part) in [(C64::new(FD_STEP, 0.0), 0), (C64::new(0.0, FD_STEP), 1)] {
            let (mut p, mut m) = (d.clone(), d.clone());
            p.w[idx] += unit;
            m.w[idx] -= unit;
            fd.push(central(&f, p, m));
            an.push(if part == 0 { gw[idx].re } else { gw[idx].im });
        }
    }
    let e_w = rel_err(&fd, &an);

    let gc = grad_c(cs, d).unwrap();
    let (mut fd, mut an) = (Vec::new(), Vec::new());
    for k in 0..gc.len() {
        for (unit, part) in [(C64::new(FD_STEP, 0.0), 0), (C64::new(0.0, FD_STEP), 1)] {
            let (mut p, mut m) = (d.clone(), d.clone());
            p.c[k] += unit;
            m.c[k] -= unit;
            fd.push(central(&f, p, m));
            an.push(2.0 * if part == 0 { gc[k].re } else { gc[k].im });
        }
    }
    let e_c = rel_err(&fd, &an);

    let gt = grad_theta(cs, d, w, dual).unwrap();
    let mut fd = Vec::new();
    for n in 0..gt.len() {
        let (mut p, mut m) = (d.clone(), d.clone());
        p.theta[n] += FD_STEP;
        m.theta[n] -= FD_STEP;
        fd.push(central(&f, p, m));
    }
    let e_t = rel_err(&fd, gt.as_slice());
    [e_w, e_c, e_t]
}
