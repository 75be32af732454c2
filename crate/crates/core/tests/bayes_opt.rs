use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use secure_irs::bayes_opt::{
    acquisition_cucb, expected_improvement, feature_map, gp_fit, kernel_latent, mc_objective,
    run_bo, BlockKernel, BoOptions, ChannelPrior, FitOptions, GaussianProcess, GpHyper,
    LatentCodec, SyntheticQuadratic,
};
use secure_irs::channel::{Design, Dims, NoiseVariances, Weights, C64};
use secure_irs::rng::rng_from_seed;
use secure_irs::Execution;

fn pts1(v: &[f64]) -> Vec<DVector<f64>> {
    v.iter().map(|&x| DVector::from_element(1, x)).collect()
}

/// Phase-only design: W = 0, c = 0.
fn phase_design(theta: Vec<f64>) -> Design {
    Design {
        theta: DVector::from_vec(theta),
        w: DMatrix::zeros(1, 1),
        c: DVector::zeros(1),
    }
}

fn random_design<R: Rng>(dims: &Dims, rng: &mut R) -> Design {
    Design {
        theta: DVector::from_fn(dims.n, |_, _| rng.random_range(0.0..std::f64::consts::TAU)),
        w: DMatrix::from_fn(dims.m, dims.k_h, |_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * 0.2
        }),
        c: DVector::from_fn(dims.k_h, |_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * 0.3
        }),
    }
}

/// Inverse of a 3×3 matrix by cofactors.
fn inverse3(a: &DMatrix<f64>) -> DMatrix<f64> {
    let m = |i: usize, j: usize| a[(i % 3, j % 3)];
    let cof = DMatrix::from_fn(3, 3, |i, j| {
        m(i + 1, j + 1) * m(i + 2, j + 2) - m(i + 1, j + 2) * m(i + 2, j + 1)
    });
    let det = (0..3).map(|j| a[(0, j)] * cof[(0, j)]).sum::<f64>();
    cof.transpose() / det
}

#[test]
fn phase_features_give_chordal_distance() {
    let mut rng = rng_from_seed(1);
    for _ in 0..20 {
        let a: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..6.3)).collect();
        let b: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..6.3)).collect();
        let dist = (feature_map(&phase_design(a.clone())) - feature_map(&phase_design(b.clone()))).norm();
        let chordal: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (2.0 * ((x - y) / 2.0).sin()).powi(2))
            .sum::<f64>()
            .sqrt();
        assert_relative_eq!(dist, chordal, epsilon = 1e-12);
    }
}

#[test]
fn random_projection_preserves_pairwise_distances() {
    let dims = Dims::new(8, 64, 4, 1).unwrap();
    let d = (8.0 / 0.25 * 50f64.ln()).ceil() as usize;
    let codec = LatentCodec::new(dims, 1.0, d, &mut rng_from_seed(2)).unwrap();
    let mut rng = rng_from_seed(3);
    let mut ok = 0;
    for _ in 0..50 {
        let (x1, x2) = (random_design(&dims, &mut rng), random_design(&dims, &mut rng));
        let ratio = (codec.encode(&x1) - codec.encode(&x2)).norm()
            / (feature_map(&x1) - feature_map(&x2)).norm();
        if (0.5..=1.5).contains(&ratio) {
            ok += 1;
        }
    }
    assert!(ok >= 45, "{ok}/50 pairs within distortion");
    let x = random_design(&dims, &mut rng);
    assert_eq!(codec.encode(&x), codec.encode(&x.clone()));
}

#[test]
fn round_trip_recovers_the_projected_phases() {
    let dims = Dims::new(2, 6, 2, 1).unwrap();
    let codec = LatentCodec::new(dims, 10.0, 12, &mut rng_from_seed(4)).unwrap();
    let r = codec.projection();
    let pinv = r.clone().pseudo_inverse(1e-12).unwrap();
    let mut rng = rng_from_seed(5);
    for _ in 0..10 {
        let x = random_design(&dims, &mut rng);
        let phi = pinv.clone() * (r * feature_map(&x));
        let back = codec.decode(&codec.encode(&x));
        for n in 0..6 {
            let expect = phi[6 + n].atan2(phi[n]).rem_euclid(std::f64::consts::TAU);
            let diff = (back.theta[n] - expect).abs();
            assert!(diff < 1e-9 || (diff - std::f64::consts::TAU).abs() < 1e-9);
        }
    }
}

#[test]
fn square_codec_round_trips_exactly() {
    let dims = Dims::new(2, 3, 2, 1).unwrap();
    let codec = LatentCodec::new(dims, 10.0, 18, &mut rng_from_seed(6)).unwrap();
    let x = random_design(&dims, &mut rng_from_seed(7));
    let back = codec.decode(&codec.encode(&x));
    assert!((feature_map(&back) - feature_map(&x)).norm() < 1e-9);
}

#[test]
fn latent_kernel_is_symmetric_and_periodic() {
    let dims = Dims::new(2, 4, 2, 1).unwrap();
    let codec = LatentCodec::new(dims, 1.0, 10, &mut rng_from_seed(8)).unwrap();
    let h = GpHyper::new(vec![0.8, 0.5, 1.2], 1.7, 0.0);
    let mut rng = rng_from_seed(9);
    for _ in 0..20 {
        let z1 = DVector::from_fn(10, |_, _| rng.random_range(-3.0..3.0));
        let z2 = DVector::from_fn(10, |_, _| rng.random_range(-3.0..3.0));
        assert!((kernel_latent(&codec, &z1, &z2, &h) - kernel_latent(&codec, &z2, &z1, &h)).abs() < 1e-14);
        assert_eq!(kernel_latent(&codec, &z1, &z1, &h), 1.7);
    }
    let k = codec.kernel();
    let a = random_design(&dims, &mut rng);
    let mut b = a.clone();
    b.theta.iter_mut().for_each(|t| *t += std::f64::consts::TAU);
    let other = random_design(&dims, &mut rng);
    let ka = k.eval(&feature_map(&a), &feature_map(&other), &h);
    let kb = k.eval(&feature_map(&b), &feature_map(&other), &h);
    assert_relative_eq!(ka, kb, max_relative = 1e-12);
}

#[test]
fn three_point_posterior_matches_explicit_inverse() {
    let kern = BlockKernel::isotropic(1);
    let h = GpHyper::new(vec![0.6], 1.4, 0.05);
    let xs = [-0.3, 0.2, 1.1];
    let ys = [0.5, -1.0, 2.0];
    let gp = GaussianProcess::new(kern.clone(), h.clone(), pts1(&xs), &ys).unwrap();
    let k = |a: f64, b: f64| 1.4 * (-0.5 * (a - b).powi(2) / 0.36).exp();
    let kmat = DMatrix::from_fn(3, 3, |i, j| k(xs[i], xs[j]) + if i == j { 0.05 } else { 0.0 });
    let inv = inverse3(&kmat);
    let y = DVector::from_column_slice(&ys);
    for q in [-1.0, 0.0, 0.7, 2.5] {
        let kt = DVector::from_fn(3, |i, _| k(q, xs[i]));
        let mean = (kt.transpose() * &inv * &y)[0];
        let var = 1.4 - (kt.transpose() * &inv * &kt)[0];
        let (m, v) = gp.predict(&DVector::from_element(1, q));
        assert!((m - mean).abs() < 1e-10, "{m} vs {mean}");
        assert!((v - var).abs() < 1e-10, "{v} vs {var}");
    }
}

#[test]
fn noiseless_gp_interpolates() {
    let h = GpHyper::new(vec![0.5], 2.0, 0.0);
    let xs = [0.0, 0.7, 1.5, 2.0];
    let ys = [1.0, -0.5, 0.25, 3.0];
    let gp = GaussianProcess::new(BlockKernel::isotropic(1), h, pts1(&xs), &ys).unwrap();
    for (x, y) in xs.iter().zip(&ys) {
        let (m, v) = gp.predict(&DVector::from_element(1, *x));
        assert!((m - y).abs() < 1e-10);
        assert!(v.abs() < 1e-10);
    }
}

#[test]
fn fitted_lengthscale_is_close_to_the_truth() {
    let truth = 0.5;
    let xs: Vec<f64> = (0..40).map(|i| i as f64 * 0.125).collect();
    let kern = BlockKernel::isotropic(1);
    let h = GpHyper::new(vec![truth], 1.0, 0.0);
    let mut kmat = kern.matrix(&pts1(&xs), &h);
    for i in 0..kmat.nrows() {
        kmat[(i, i)] += 1e-10;
    }
    let l = kmat.cholesky().unwrap().unpack();
    for seed in 0..5 {
        let mut rng = rng_from_seed(100 + seed);
        let u = DVector::from_fn(xs.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &l * u;
        let gp = gp_fit(&kern, pts1(&xs), y.as_slice(), &FitOptions::default()).unwrap();
        let ell = gp.hyper().lengthscales[0];
        assert!(ell > truth / 2.0 && ell < truth * 2.0, "seed {seed}: {ell}");
    }
}

#[test]
fn posterior_variance_shrinks_with_more_data() {
    let kern = BlockKernel::isotropic(2);
    let h = GpHyper::new(vec![0.7], 1.0, 0.01);
    let mut rng = rng_from_seed(11);
    let xs: Vec<DVector<f64>> = (0..15)
        .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0)))
        .collect();
    let q = DVector::from_vec(vec![0.3, -0.4]);
    let mut prev = f64::INFINITY;
    for n in 1..=xs.len() {
        let gp = GaussianProcess::new(kern.clone(), h.clone(), xs[..n].to_vec(), &vec![0.0; n]).unwrap();
        let (_, v) = gp.predict(&q);
        assert!(v <= prev + 1e-12);
        prev = v;
    }
}

#[test]
fn kernel_matrices_are_positive_semidefinite() {
    let kern = BlockKernel::new(vec![0..2, 2..5]).unwrap();
    let mut rng = rng_from_seed(12);
    for _ in 0..100 {
        let n = rng.random_range(2..20);
        let h = GpHyper::new(
            vec![rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)],
            rng.random_range(0.1..5.0),
            0.0,
        );
        let xs: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(5, |_, _| rng.random_range(-3.0..3.0)))
            .collect();
        let mut k = kern.matrix(&xs, &h);
        for i in 0..n {
            k[(i, i)] += 1e-10;
        }
        let min = SymmetricEigen::new(k).eigenvalues.min();
        assert!(min >= 0.0, "{min}");
    }
}

#[test]
fn expected_improvement_matches_sampling() {
    let mut rng = rng_from_seed(13);
    for (mean, sd, inc) in [(0.0, 1.0, 0.5), (1.0, 0.3, 0.8), (-0.2, 2.0, -1.0)] {
        let n = 1_000_000;
        let mc = (0..n)
            .map(|_| (inc - (mean + sd * rng.sample::<f64, _>(StandardNormal))).max(0.0))
            .sum::<f64>()
            / n as f64;
        let ei = expected_improvement((mean, sd * sd), inc);
        assert!((ei - mc).abs() <= 0.01 * ei, "{ei} vs {mc}");
    }
}

#[test]
fn ucb_exploits_without_uncertainty_and_explores_with_large_beta() {
    let feasible = [(-1.0, 0.0)];
    let means = [0.4, -0.2, 0.1];
    let best = means
        .iter()
        .map(|&m| acquisition_cucb((m, 0.0), &feasible, 5, 0.1))
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0;
    assert_eq!(best, 1);
    let blocked = acquisition_cucb((-5.0, 0.0), &[(1.0, 0.0)], 5, 0.1);
    assert_eq!(blocked, f64::NEG_INFINITY);

    let confident = (0.0, 0.01);
    let uncertain = (0.5, 1.0);
    let pick = |t| acquisition_cucb(uncertain, &feasible, t, 0.1) > acquisition_cucb(confident, &feasible, t, 0.1);
    assert!(!pick(0));
    assert!(pick(1000));
}

#[test]
fn monte_carlo_objective_converges() {
    let dims = Dims::new(2, 4, 2, 1).unwrap();
    let codec = LatentCodec::new(dims, 1.0, 8, &mut rng_from_seed(14)).unwrap();
    let z = DVector::from_fn(8, |i, _| 0.3 * (i as f64).cos());
    let w = Weights::default();
    let prior = ChannelPrior::IidRayleigh {
        noise: NoiseVariances::default(),
    };
    let run = |n, seed| {
        mc_objective(&z, &codec, &w, &prior, n, &mut rng_from_seed(seed), Execution::default()).unwrap()
    };
    assert_eq!(run(50, 1), run(50, 1));
    let a = run(10_000, 2);
    let b = run(100_000, 3);
    let se = (a.f_stderr.powi(2) + b.f_stderr.powi(2)).sqrt();
    assert!((a.f - b.f).abs() <= 3.0 * se, "{} vs {} (se {se})", a.f, b.f);
    let se = (a.g_leak_stderr.powi(2) + b.g_leak_stderr.powi(2)).sqrt();
    assert!((a.g_leak - b.g_leak).abs() <= 3.0 * se);
    assert_eq!(a.g_power, b.g_power);
}

fn grid_optimum(points: usize) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points {
        for j in 0..points {
            let z = [
                -3.0 + 6.0 * i as f64 / (points - 1) as f64,
                -3.0 + 6.0 * j as f64 / (points - 1) as f64,
            ];
            if SyntheticQuadratic::constraint(&z) <= 0.0 {
                best = best.min(SyntheticQuadratic::objective(&z));
            }
        }
    }
    best
}

#[test]
fn bo_finds_the_constrained_minimum() {
    let grid = grid_optimum(1000);
    assert!((grid - SyntheticQuadratic::OPTIMUM).abs() < 0.01);
    let opts = BoOptions::default();
    for seed in [1, 2] {
        let out = run_bo(&SyntheticQuadratic, &opts, seed, Execution::default()).unwrap();
        assert!(out.feasible);
        assert!(out.best.f <= 1.05 * grid, "seed {seed}: {}", out.best.f);
        let curve: Vec<f64> = out.trace.iter().filter_map(|r| r.incumbent).collect();
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
    }
}
