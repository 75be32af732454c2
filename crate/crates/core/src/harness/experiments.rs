use std::collections::HashMap;

use nalgebra::DVector;

use super::config::{BoChannel, ExperimentConfig, ExperimentKind, Method};
use super::metrics::{mean_stderr, metric_wpt_zeta};
use super::output::{RawRecord, ResultRow};
use super::HarnessError;
use crate::alt_opt::{initial_design, lower_bound_cost, run_alternating, AltOptions, AltOutcome, CsiOracle};
use crate::bayes_opt::{
    default_latent_dim, feature_dim, run_bo, BoOutcome, ChannelPrior, IrsProblem, LatentCodec,
};
use crate::channel::{evaluate, ChannelSet, Design, Weights, C64};
use crate::exec::Execution;
use crate::rng::{derive_seed, fnv1a, rng_from_seed};
use crate::sensing::{decide, quantile_threshold, simulate_trials, Hypothesis, TrialOutcome};

/// Summary rows plus the per-trial samples behind them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub raw: Vec<RawRecord>,
}

struct Sample {
    sweep: &'static str,
    value: f64,
    metric: String,
    sample: f64,
}

impl Sample {
    fn new(sweep: &'static str, value: f64, metric: impl Into<String>, sample: f64) -> Self {
        Sample {
            sweep,
            value,
            metric: metric.into(),
            sample,
        }
    }
}

struct Group {
    sweep: &'static str,
    value: f64,
    metric: String,
    samples: Vec<f64>,
}

/// Groups samples by (sweep, value, metric) in first-seen order.
struct Collector<'a> {
    cfg: &'a ExperimentConfig,
    groups: Vec<Group>,
    index: HashMap<(&'static str, u64, String), usize>,
    raw: Vec<RawRecord>,
    extra: Vec<ResultRow>,
}

impl<'a> Collector<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Collector {
            cfg,
            groups: Vec::new(),
            index: HashMap::new(),
            raw: Vec::new(),
            extra: Vec::new(),
        }
    }

    fn record_raw(&mut self, trial: usize, seed: u64, s: &Sample) {
        self.raw.push(RawRecord {
            experiment: self.cfg.id.clone(),
            sweep: s.sweep.to_string(),
            value: s.value,
            metric: s.metric.clone(),
            trial,
            seed,
            sample: s.sample,
        });
    }

    fn add(&mut self, trial: usize, seed: u64, s: Sample) {
        self.record_raw(trial, seed, &s);
        let key = (s.sweep, s.value.to_bits(), s.metric.clone());
        let idx = *self.index.entry(key).or_insert_with(|| {
            self.groups.push(Group {
                sweep: s.sweep,
                value: s.value,
                metric: s.metric.clone(),
                samples: Vec::new(),
            });
            self.groups.len() - 1
        });
        self.groups[idx].samples.push(s.sample);
    }

    /// A sample kept only in the raw records.
    fn add_raw_only(&mut self, trial: usize, seed: u64, s: Sample) {
        self.record_raw(trial, seed, &s);
    }

    /// A derived quantity with no per-trial spread.
    fn add_row(&mut self, sweep: &str, value: f64, metric: String, mean: f64, trials: usize) {
        self.extra.push(self.row(sweep, value, metric, mean, 0.0, trials));
    }

    fn row(&self, sweep: &str, value: f64, metric: String, mean: f64, stderr: f64, trials: usize) -> ResultRow {
        ResultRow {
            experiment: self.cfg.id.clone(),
            sweep: sweep.to_string(),
            value,
            metric,
            mean,
            stderr,
            trials,
            seed: self.cfg.seed,
        }
    }

    /// Unbounded samples (the ζ sentinel) are kept in the raw records but
    /// left out of the means.
    fn finish(self) -> ExperimentOutput {
        let mut rows: Vec<ResultRow> = self
            .groups
            .iter()
            .map(|g| {
                let finite: Vec<f64> = g.samples.iter().copied().filter(|x| x.is_finite()).collect();
                if finite.len() < g.samples.len() {
                    log::info!(
                        "{} {}={}: {} unbounded samples excluded",
                        g.metric,
                        g.sweep,
                        g.value,
                        g.samples.len() - finite.len()
                    );
                }
                let (mean, se) = mean_stderr(&finite);
                self.row(g.sweep, g.value, g.metric.clone(), mean, se, finite.len())
            })
            .collect();
        rows.extend(self.extra);
        ExperimentOutput { rows, raw: self.raw }
    }
}

/// Master-seed derivation: `derive_seed(master, [fnv1a(id), sweep, k])`.
fn stream(cfg: &ExperimentConfig, sweep: usize, k: u64) -> u64 {
    derive_seed(cfg.seed, &[fnv1a(&cfg.id), sweep as u64, k])
}

/// Runs the configured experiment. Output depends only on the config and
/// its master seed, not on `exec`.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let mut col = Collector::new(cfg);
    match cfg.kind {
        ExperimentKind::PdVsSnr => pd_vs_snr(cfg, &mut col, exec)?,
        ExperimentKind::PdVsIter => pd_vs_iter(cfg, &mut col, exec)?,
        ExperimentKind::Roc => roc(cfg, &mut col, exec)?,
        ExperimentKind::MseVsIter => mse_vs_iter(cfg, &mut col, exec)?,
        ExperimentKind::MseVsSnr | ExperimentKind::WptZeta | ExperimentKind::BoVsAlt => {
            final_metrics(cfg, &mut col, exec)?
        }
    }
    Ok(col.finish())
}

// Sensing ---------------------------------------------------------------

/// Calibration, H1 and fresh H0 frames for one sweep point. Frame `i` of
/// phase `k` uses `derive_seed(stream(sweep, k), [i])`.
struct Frames {
    calibration: Vec<TrialOutcome>,
    h1: Vec<TrialOutcome>,
    h0: Vec<TrialOutcome>,
    seeds: [u64; 3],
}

fn frames(cfg: &ExperimentConfig, sweep: usize, samples: usize, snr_db: f64, exec: Execution) -> Frames {
    let scenario = cfg.sensing.scenario(&cfg.dims, samples, snr_db);
    let seeds = [stream(cfg, sweep, 0), stream(cfg, sweep, 1), stream(cfg, sweep, 2)];
    Frames {
        calibration: simulate_trials(&scenario, Hypothesis::H0, cfg.sensing.calibration_trials, seeds[0], exec),
        h1: simulate_trials(&scenario, Hypothesis::H1, cfg.trials, seeds[1], exec),
        h0: simulate_trials(&scenario, Hypothesis::H0, cfg.trials, seeds[2], exec),
        seeds,
    }
}

fn trial_seed(phase_seed: u64, i: usize) -> u64 {
    derive_seed(phase_seed, &[i as u64])
}

/// Threshold at `round` (1-based) plus Pd/Pfa samples at that threshold.
#[allow(clippy::too_many_arguments)]
fn detection_samples(
    col: &mut Collector<'_>,
    f: &Frames,
    round: usize,
    pfa: f64,
    sweep: &'static str,
    value: f64,
    suffix: &str,
    raw_calibration: bool,
) -> Result<(), HarnessError> {
    let at = |t: &TrialOutcome| t.fused[round - 1];
    let calib: Vec<f64> = f.calibration.iter().map(at).collect();
    let tau = quantile_threshold(&calib, pfa)?;
    if raw_calibration {
        for (i, x) in calib.iter().enumerate() {
            col.add_raw_only(i, trial_seed(f.seeds[0], i), Sample::new(sweep, value, format!("h0_fused{suffix}"), *x));
        }
    }
    col.add_row(sweep, value, format!("tau{suffix}"), tau, calib.len());
    for (i, t) in f.h1.iter().enumerate() {
        let hit = (decide(at(t), tau) == Hypothesis::H1) as u8 as f64;
        col.add(i, trial_seed(f.seeds[1], i), Sample::new(sweep, value, format!("pd{suffix}"), hit));
    }
    for (i, t) in f.h0.iter().enumerate() {
        let alarm = (decide(at(t), tau) == Hypothesis::H1) as u8 as f64;
        col.add(i, trial_seed(f.seeds[2], i), Sample::new(sweep, value, format!("pfa{suffix}"), alarm));
    }
    Ok(())
}

fn pd_vs_snr(cfg: &ExperimentConfig, col: &mut Collector<'_>, exec: Execution) -> Result<(), HarnessError> {
    let s = &cfg.sensing;
    for (si, &snr) in s.snr_db.iter().enumerate() {
        for (ji, &j) in s.samples.iter().enumerate() {
            let sweep = si * s.samples.len() + ji;
            let f = frames(cfg, sweep, j, snr, exec);
            detection_samples(col, &f, s.rounds, s.target_pfa, "snr_db", snr, &format!("[J={j}]"), true)?;
        }
    }
    Ok(())
}

fn pd_vs_iter(cfg: &ExperimentConfig, col: &mut Collector<'_>, exec: Execution) -> Result<(), HarnessError> {
    let s = &cfg.sensing;
    let f = frames(cfg, 0, s.samples[0], s.snr_db[0], exec);
    for round in 1..=s.rounds {
        detection_samples(col, &f, round, s.target_pfa, "round", round as f64, "", round == s.rounds)?;
    }
    Ok(())
}

fn roc(cfg: &ExperimentConfig, col: &mut Collector<'_>, exec: Execution) -> Result<(), HarnessError> {
    let s = &cfg.sensing;
    let f = frames(cfg, 0, s.samples[0], s.snr_db[0], exec);
    for (i, &pfa) in s.pfa_grid.iter().enumerate() {
        detection_samples(col, &f, s.rounds, pfa, "target_pfa", pfa, "", i == 0)?;
    }
    Ok(())
}

// Transmission design ----------------------------------------------------

/// Weights with `P_max` set from a transmit SNR in dB.
fn weights_at(cfg: &ExperimentConfig, snr_db: f64) -> Weights {
    Weights {
        p_max: 10f64.powf(snr_db / 10.0) * cfg.optimizer.noise.user,
        ..cfg.optimizer.weights
    }
}

/// Every design produced for one channel draw.
struct TrialDesigns {
    cs: ChannelSet,
    init: Design,
    full: Option<AltOutcome>,
    partial: Option<AltOutcome>,
    bayes: Option<(LatentCodec, BoOutcome)>,
}

fn bayes_search(
    cfg: &ExperimentConfig,
    cs: &ChannelSet,
    weights: &Weights,
    seed: u64,
) -> Result<(LatentCodec, BoOutcome), HarnessError> {
    let dims = cs.dims();
    let b = &cfg.bo;
    let d = b
        .latent_dim
        .unwrap_or_else(|| default_latent_dim(feature_dim(&dims), b.search.budget, b.jl_epsilon));
    let codec = LatentCodec::new(dims, weights.p_max, d, &mut rng_from_seed(derive_seed(seed, &[0])))?;
    let prior = match b.channel {
        BoChannel::AroundNominal { epsilon } => ChannelPrior::AroundNominal {
            nominal: cs.clone(),
            epsilon,
        },
        BoChannel::IidRayleigh => ChannelPrior::IidRayleigh {
            noise: cfg.optimizer.noise,
        },
    };
    let problem = IrsProblem {
        codec,
        weights: *weights,
        prior,
        n_mc: b.n_mc,
        exec: Execution::Sequential,
    };
    problem.validate()?;
    let out = run_bo(&problem, &b.search, derive_seed(seed, &[1]), Execution::Sequential)?;
    Ok((problem.codec, out))
}

/// Draws the trial's channel and runs every requested method on it. All
/// methods see the same channel and the alternating runs share their
/// starting point.
fn design_trial(
    cfg: &ExperimentConfig,
    weights: &Weights,
    methods: &[Method],
    wpt: bool,
    seed: u64,
) -> Result<TrialDesigns, HarnessError> {
    let mut rng = rng_from_seed(derive_seed(seed, &[0]));
    let cs = ChannelSet::sample(&cfg.dims, &cfg.optimizer.noise, &mut rng);
    let mut init = initial_design(&cs, weights, &mut rng);
    let mut opts: AltOptions = cfg.optimizer.solver;
    if wpt {
        init.c = DVector::from_element(cfg.dims.k_h, C64::from(1.0));
        opts.closed_form_c = false;
        opts.fixed_c = true;
    }
    let want = |m: Method| methods.contains(&m);
    let full = if want(Method::Full) || want(Method::LowerBound) {
        let o = AltOptions {
            csi: CsiOracle::Exact,
            ..opts
        };
        Some(run_alternating(&cs, init.clone(), weights, &o, &mut rng_from_seed(derive_seed(seed, &[1])))?)
    } else {
        None
    };
    let partial = if want(Method::Partial) {
        let o = AltOptions {
            csi: CsiOracle::Noisy {
                epsilon: cfg.optimizer.partial_epsilon,
            },
            ..opts
        };
        Some(run_alternating(&cs, init.clone(), weights, &o, &mut rng_from_seed(derive_seed(seed, &[2])))?)
    } else {
        None
    };
    let bayes = if want(Method::Bayes) {
        Some(bayes_search(cfg, &cs, weights, derive_seed(seed, &[3]))?)
    } else {
        None
    };
    Ok(TrialDesigns {
        cs,
        init,
        full,
        partial,
        bayes,
    })
}

fn sum_mse(cs: &ChannelSet, d: &Design, w: &Weights) -> Result<f64, HarnessError> {
    Ok(evaluate(cs, d, w)?.sum_mse)
}

/// Sum MSE after each iteration `0..=T_max`, holding the final value once
/// the run has stopped.
fn iteration_curve(initial: f64, out: &AltOutcome, t_max: usize) -> Vec<f64> {
    let mut curve = vec![initial];
    curve.extend(out.trace.rows.iter().map(|r| r.sum_mse));
    let last = *curve.last().expect("non-empty");
    curve.resize(t_max + 1, last);
    curve
}

/// True-channel sum MSE of the BO incumbent after each evaluation: the best
/// feasible point so far, or the least-violating one before any is feasible.
fn bayes_curve(td: &TrialDesigns, w: &Weights) -> Result<Vec<f64>, HarnessError> {
    let (codec, out) = td.bayes.as_ref().expect("bayes run");
    let obs = &out.state.observations;
    let mut best: Option<usize> = None;
    let mut curve = Vec::with_capacity(obs.len());
    for (i, o) in obs.iter().enumerate() {
        best = Some(match best {
            None => i,
            Some(b) => {
                let ob = &obs[b];
                let better = match (o.feasible(), ob.feasible()) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => o.f < ob.f,
                    (false, false) => o.violation() < ob.violation(),
                };
                if better {
                    i
                } else {
                    b
                }
            }
        });
        let d = codec.decode(&out.state.points[best.expect("set above")]);
        curve.push(sum_mse(&td.cs, &d, w)?);
    }
    Ok(curve)
}

fn mse_vs_iter(cfg: &ExperimentConfig, col: &mut Collector<'_>, exec: Execution) -> Result<(), HarnessError> {
    let w = weights_at(cfg, cfg.optimizer.snr_db[0]);
    let methods = &cfg.optimizer.methods;
    let t_max = cfg.optimizer.solver.t_max;
    let results = exec.map(cfg.trials, |i| {
        let seed = stream(cfg, 0, i as u64);
        let td = design_trial(cfg, &w, methods, false, seed)?;
        let init = sum_mse(&td.cs, &td.init, &w)?;
        let mut samples = Vec::new();
        for m in methods {
            match m {
                Method::Full | Method::Partial => {
                    let out = if *m == Method::Full { &td.full } else { &td.partial };
                    let curve = iteration_curve(init, out.as_ref().expect("requested"), t_max);
                    for (t, v) in curve.into_iter().enumerate() {
                        samples.push(Sample::new("iteration", t as f64, m.name(), v));
                    }
                }
                Method::Bayes => {
                    for (t, v) in bayes_curve(&td, &w)?.into_iter().enumerate() {
                        samples.push(Sample::new("evaluation", (t + 1) as f64, m.name(), v));
                    }
                }
                Method::LowerBound => {}
            }
        }
        Ok::<_, HarnessError>((seed, samples))
    });
    for (i, r) in results.into_iter().enumerate() {
        let (seed, samples) = r?;
        for s in samples {
            col.add(i, seed, s);
        }
    }
    Ok(())
}

/// Final-design metrics: sum MSE per method (`mse_vs_snr`, `bo_vs_alt`) or
/// the power-transfer ratio ζ (`wpt_zeta`).
fn final_metrics(cfg: &ExperimentConfig, col: &mut Collector<'_>, exec: Execution) -> Result<(), HarnessError> {
    let wpt = cfg.kind == ExperimentKind::WptZeta;
    let (sweep, grid): (&'static str, Vec<f64>) = if cfg.kind == ExperimentKind::BoVsAlt {
        ("snr_db", vec![cfg.optimizer.snr_db[0]])
    } else {
        ("snr_db", cfg.optimizer.snr_db.clone())
    };
    let methods: Vec<Method> = if cfg.kind == ExperimentKind::BoVsAlt {
        vec![Method::Full, Method::Partial, Method::Bayes]
    } else {
        cfg.optimizer.methods.clone()
    };
    for (si, &snr) in grid.iter().enumerate() {
        let w = weights_at(cfg, snr);
        let results = exec.map(cfg.trials, |i| {
            let seed = stream(cfg, si, i as u64);
            let td = design_trial(cfg, &w, &methods, wpt, seed)?;
            let mut samples = Vec::new();
            for m in &methods {
                let design = match m {
                    Method::Full => td.full.as_ref().map(|o| o.design.clone()),
                    Method::Partial => td.partial.as_ref().map(|o| o.design.clone()),
                    Method::Bayes => td.bayes.as_ref().map(|(c, o)| c.decode(&o.best_z)),
                    Method::LowerBound => None,
                };
                let value = match (m, design) {
                    (Method::LowerBound, _) => {
                        let theta = &td.full.as_ref().expect("full run").design.theta;
                        lower_bound_cost(&td.cs, theta, w.p_max)?
                    }
                    (_, Some(d)) if wpt => metric_wpt_zeta(&td.cs, &d)?,
                    (_, Some(d)) => sum_mse(&td.cs, &d, &w)?,
                    (_, None) => unreachable!("requested methods always run"),
                };
                samples.push(Sample::new(sweep, snr, m.name(), value));
            }
            if let Some((_, out)) = &td.bayes {
                samples.push(Sample::new(sweep, snr, "bayes_feasible", out.feasible as u8 as f64));
            }
            Ok::<_, HarnessError>((seed, samples))
        });
        for (i, r) in results.into_iter().enumerate() {
            let (seed, samples) = r?;
            for s in samples {
                col.add(i, seed, s);
            }
        }
    }
    Ok(())
}
