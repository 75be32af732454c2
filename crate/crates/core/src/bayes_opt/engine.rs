use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::acquisition::{log_feasibility, Acquisition, Posterior};
use super::gp::{gp_fit, FitOptions, GaussianProcess};
use super::problem::{BlackBox, Observation};
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoOptions {
    /// Total evaluations `T`, including the initial design.
    pub budget: usize,
    pub n_init: usize,
    /// Half-width `B` of the latent box `[−B, B]^d`.
    pub box_half_width: f64,
    pub acquisition: Acquisition,
    /// Random candidates scored per acquisition search.
    pub candidates: usize,
    /// Local perturbation steps around the best candidate.
    pub refine_steps: usize,
    /// Use closed-form constraints when the problem provides them instead of
    /// fitting a surrogate.
    pub known_constraints: bool,
    pub fit: FitOptions,
}

impl Default for BoOptions {
    fn default() -> Self {
        BoOptions {
            budget: 60,
            n_init: 10,
            box_half_width: 3.0,
            acquisition: Acquisition::default(),
            candidates: 1024,
            refine_steps: 20,
            known_constraints: false,
            fit: FitOptions::default(),
        }
    }
}

impl BoOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_init < 2 {
            return Err(invalid("bo.n_init", "at least two initial points"));
        }
        if self.budget <= self.n_init {
            return Err(invalid("bo.budget", "must exceed n_init"));
        }
        if !(self.box_half_width > 0.0 && self.box_half_width.is_finite()) {
            return Err(invalid("bo.box_half_width", "must be positive"));
        }
        if self.candidates == 0 {
            return Err(invalid("bo.candidates", "at least one candidate"));
        }
        self.acquisition.validate()?;
        self.fit.validate()
    }
}

/// One evaluation in the order it was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoRecord {
    pub t: usize,
    pub f: f64,
    pub g: Vec<f64>,
    pub feasible: bool,
    /// Best feasible objective so far.
    pub incumbent: Option<f64>,
    /// `0.5 log det(I + K/σ_n²)` of the objective surrogate that chose this
    /// point; absent for the initial design.
    pub info_gain: Option<f64>,
}

/// Evaluated points and their observations.
#[derive(Debug, Clone, Default)]
pub struct BoState {
    pub points: Vec<DVector<f64>>,
    pub observations: Vec<Observation>,
    features: Vec<DVector<f64>>,
}

impl BoState {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the best empirically feasible point.
    pub fn incumbent(&self) -> Option<usize> {
        self.observations
            .iter()
            .enumerate()
            .filter(|(_, o)| o.feasible())
            .min_by(|a, b| a.1.f.total_cmp(&b.1.f))
            .map(|(i, _)| i)
    }

    fn least_violation(&self) -> usize {
        self.observations
            .iter()
            .enumerate()
            .min_by(|a, b| {
                a.1.violation()
                    .total_cmp(&b.1.violation())
                    .then(a.1.f.total_cmp(&b.1.f))
            })
            .map(|(i, _)| i)
            .expect("non-empty state")
    }

    /// Best feasible objective after each evaluation.
    pub fn best_feasible_curve(&self) -> Vec<Option<f64>> {
        let mut best: Option<f64> = None;
        self.observations
            .iter()
            .map(|o| {
                if o.feasible() && best.is_none_or(|b| o.f < b) {
                    best = Some(o.f);
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct BoOutcome {
    pub best_z: DVector<f64>,
    pub best: Observation,
    /// False when no evaluated point was feasible; `best` is then the point
    /// of least violation.
    pub feasible: bool,
    pub state: BoState,
    pub trace: Vec<BoRecord>,
}

/// `n` points in `[−B, B]^dim`, one per stratum in every coordinate.
pub fn latin_hypercube<R: Rng + ?Sized>(
    n: usize,
    dim: usize,
    half_width: f64,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let mut pts = vec![DVector::zeros(dim); n];
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..dim {
        strata.shuffle(rng);
        for (p, &s) in pts.iter_mut().zip(&strata) {
            let u = (s as f64 + rng.random::<f64>()) / n as f64;
            p[j] = -half_width + 2.0 * half_width * u;
        }
    }
    pts
}

/// Surrogates for the objective and the constraints that need one.
struct Surrogates {
    f: GaussianProcess,
    g: Vec<Option<GaussianProcess>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Score {
    acq: f64,
    fallback: f64,
}

struct Scorer<'a, P: BlackBox> {
    problem: &'a P,
    models: &'a Surrogates,
    acquisition: Acquisition,
    incumbent: f64,
    t: usize,
}

impl<P: BlackBox> Scorer<'_, P> {
    fn score(&self, z: &DVector<f64>) -> Score {
        let x = self.problem.features(z);
        let sq = self.models.f.cross_sq_dists(&x);
        let post_f = self.models.f.predict_with(&sq);
        let post_g: Vec<Posterior> = self
            .models
            .g
            .iter()
            .enumerate()
            .map(|(j, gp)| match gp {
                Some(gp) => gp.predict_with(&sq),
                None => (
                    self.problem
                        .known_constraint(j, z)
                        .expect("surrogate skipped only for known constraints"),
                    0.0,
                ),
            })
            .collect();
        Score {
            acq: self.acquisition.score(post_f, &post_g, self.incumbent, self.t),
            fallback: post_g.iter().map(|&g| log_feasibility(g)).sum::<f64>() - 1e-9 * post_f.0,
        }
    }

    fn usable(&self, s: &Score) -> bool {
        match self.acquisition {
            Acquisition::Eic => s.acq > 0.0,
            Acquisition::ConstrainedUcb { .. } => s.acq.is_finite(),
        }
    }
}

/// Random search over the box, then a shrinking Gaussian walk from the best
/// candidate. When no candidate has a usable acquisition value (EI
/// vanishing everywhere, or the UCB gate closed) the walk maximizes the
/// joint log feasibility probability instead.
fn maximize_acquisition<P: BlackBox, R: Rng + ?Sized>(
    scorer: &Scorer<'_, P>,
    opts: &BoOptions,
    rng: &mut R,
    exec: Execution,
) -> DVector<f64> {
    let dim = scorer.problem.latent_dim();
    let b = opts.box_half_width;
    let cands: Vec<DVector<f64>> = (0..opts.candidates)
        .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-b..=b)))
        .collect();
    let scores = exec.map(cands.len(), |i| scorer.score(&cands[i]));
    let use_acq = scores.iter().any(|s| scorer.usable(s));
    let key = |s: &Score| if use_acq { s.acq } else { s.fallback };
    let (mut best_i, mut best_v) = (0, f64::NEG_INFINITY);
    for (i, s) in scores.iter().enumerate() {
        let v = key(s);
        if v > best_v {
            best_i = i;
            best_v = v;
        }
    }
    let mut best = cands[best_i].clone();
    let mut sigma = 0.1 * b;
    for _ in 0..opts.refine_steps {
        let trial = DVector::from_fn(dim, |j, _| {
            (best[j] + sigma * rng.sample::<f64, _>(StandardNormal)).clamp(-b, b)
        });
        let v = key(&scorer.score(&trial));
        if v > best_v {
            best = trial;
            best_v = v;
        } else {
            sigma *= 0.7;
        }
    }
    best
}

/// Constrained Bayesian optimization: Latin hypercube start, then one
/// acquisition-selected evaluation per iteration until the budget is spent.
pub fn run_bo<P: BlackBox>(problem: &P, opts: &BoOptions, seed: u64, exec: Execution) -> Result<BoOutcome> {
    opts.validate()?;
    let dim = problem.latent_dim();
    let kernel = problem.kernel();
    let n_g = problem.n_constraints();
    let mut rng = rng_from_seed(derive_seed(seed, &[0]));
    let mut state = BoState::default();
    let mut trace = Vec::with_capacity(opts.budget);
    let mut best_feasible: Option<f64> = None;

    let mut record = |state: &mut BoState, z: DVector<f64>, t: usize, info_gain: Option<f64>| {
        let obs = problem.evaluate(&z, derive_seed(seed, &[1, t as u64]));
        if obs.feasible() && best_feasible.is_none_or(|b| obs.f < b) {
            best_feasible = Some(obs.f);
        }
        trace.push(BoRecord {
            t,
            f: obs.f,
            g: obs.g.clone(),
            feasible: obs.feasible(),
            incumbent: best_feasible,
            info_gain,
        });
        state.features.push(problem.features(&z));
        state.points.push(z);
        state.observations.push(obs);
    };

    for (t, z) in latin_hypercube(opts.n_init, dim, opts.box_half_width, &mut rng)
        .into_iter()
        .enumerate()
    {
        record(&mut state, z, t, None);
    }

    for t in opts.n_init..opts.budget {
        let fs: Vec<f64> = state.observations.iter().map(|o| o.f).collect();
        let f = gp_fit(&kernel, state.features.clone(), &fs, &opts.fit)?;
        let mut g = Vec::with_capacity(n_g);
        for j in 0..n_g {
            let known = opts.known_constraints && problem.known_constraint(j, &state.points[0]).is_some();
            g.push(if known {
                None
            } else {
                let gs: Vec<f64> = state.observations.iter().map(|o| o.g[j]).collect();
                Some(gp_fit(&kernel, state.features.clone(), &gs, &opts.fit)?)
            });
        }
        let models = Surrogates { f, g };
        let incumbent = state
            .incumbent()
            .map(|i| state.observations[i].f)
            .unwrap_or_else(|| fs.iter().copied().fold(f64::INFINITY, f64::min));
        let scorer = Scorer {
            problem,
            models: &models,
            acquisition: opts.acquisition,
            incumbent,
            t,
        };
        let z = maximize_acquisition(&scorer, opts, &mut rng, exec);
        let gain = models.f.info_gain();
        record(&mut state, z, t, Some(gain));
    }

    let (idx, feasible) = match state.incumbent() {
        Some(i) => (i, true),
        None => {
            log::warn!("no feasible point after {} evaluations", state.len());
            (state.least_violation(), false)
        }
    };
    Ok(BoOutcome {
        best_z: state.points[idx].clone(),
        best: state.observations[idx].clone(),
        feasible,
        state,
        trace,
    })
}
