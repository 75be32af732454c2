use std::borrow::Cow;
use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lagrangian::{
    dual_update, grad_c_with, grad_theta_with, grad_w_with, lagrangian_with, DualState,
};
use crate::channel::{
    effective_unchecked, evaluate_with, mmse_from_gains, ChannelSet, Design, Weights, C64,
};
use crate::error::{invalid, Error, Result};
use crate::rng::complex_gaussian;

/// Harmonic step sizes `γ_t = γ0 / (1 + α t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub gamma0: f64,
    pub alpha: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            gamma0: 0.1,
            alpha: 0.05,
        }
    }
}

impl StepSchedule {
    pub fn step(&self, t: usize) -> f64 {
        self.gamma0 / (1.0 + self.alpha * t as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0) {
            return Err(invalid("schedule.gamma0", "must be positive"));
        }
        if !(self.alpha > 0.0) {
            return Err(invalid("schedule.alpha", "must be positive"));
        }
        Ok(())
    }
}

/// Source of the channels the optimizer sees.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CsiOracle {
    #[default]
    Exact,
    /// Every iteration sees `√(1−ε²) H + ε E` with fresh `E ~ CN(0, 1)` for
    /// each channel coefficient.
    Noisy { epsilon: f64 },
}

impl CsiOracle {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CsiOracle::Exact => Ok(()),
            CsiOracle::Noisy { epsilon } if (0.0..1.0).contains(&epsilon) => Ok(()),
            CsiOracle::Noisy { .. } => Err(invalid("csi.epsilon", "must lie in [0, 1)")),
        }
    }

    pub fn estimate<'a, R: Rng + ?Sized>(&self, cs: &'a ChannelSet, rng: &mut R) -> Cow<'a, ChannelSet> {
        match *self {
            CsiOracle::Exact => Cow::Borrowed(cs),
            CsiOracle::Noisy { epsilon } => {
                let keep = (1.0 - epsilon * epsilon).sqrt();
                let mut perturb = |x: &C64| x * keep + complex_gaussian(rng, 1.0) * epsilon;
                let mut out = cs.clone();
                out.bs_irs = cs.bs_irs.map(|x| perturb(&x));
                for v in out.irs_user.iter_mut().chain(out.irs_eav.iter_mut()) {
                    *v = v.map(|x| perturb(&x));
                }
                Cow::Owned(out)
            }
        }
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs.
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Projection onto the unit-modulus torus in the phase parametrization.
pub fn project_phases(theta_raw: &DVector<f64>) -> DVector<f64> {
    theta_raw.map(wrap_phase)
}

/// Projects an arbitrary diagonal onto unit modulus, returning the phases.
/// A zero entry has no argument and keeps its `previous` phase.
pub fn project_phases_complex(diag: &DVector<C64>, previous: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(diag.len(), |n, _| {
        let z = diag[n];
        if z.norm_sqr() == 0.0 {
            wrap_phase(previous[n])
        } else {
            wrap_phase(z.arg())
        }
    })
}

/// Scaled matched filter: column `k` is `h_eff,k` normalized to power
/// `P_max / K_H`; `c` is the MMSE equalizer for the resulting design.
pub fn matched_filter_design(cs: &ChannelSet, theta: DVector<f64>, p_max: f64) -> Design {
    let eff = effective_unchecked(cs, &crate::channel::phase_diagonal(&theta));
    let k_h = eff.users.ncols();
    let per_user = (p_max / k_h as f64).sqrt();
    let mut w = eff.users.clone();
    for mut col in w.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col *= C64::from(per_user / norm);
        }
    }
    let c = mmse_from_gains(&eff.gains(&w), &cs.sigma2_user);
    Design { theta, w, c }
}

/// Random phases `θ_n ~ U(0, 2π)` with the matched-filter precoder, shrunk
/// radially so that the starting point satisfies both constraints.
pub fn initial_design<R: Rng + ?Sized>(cs: &ChannelSet, weights: &Weights, rng: &mut R) -> Design {
    let n = cs.bs_irs.nrows();
    let theta = DVector::from_fn(n, |_, _| rng.random_range(0.0..TAU));
    scale_to_feasible(cs, &matched_filter_design(cs, theta, weights.p_max), weights)
}

/// Shrinks `W` radially until both constraints hold, then refreshes `c`.
pub fn scale_to_feasible(cs: &ChannelSet, d: &Design, w: &Weights) -> Design {
    let eff = effective_unchecked(cs, &d.reflection());
    let e = evaluate_with(&eff, cs, d, w);
    let mut s2: f64 = 1.0;
    if e.leakage > w.gamma_leak {
        s2 = s2.min(w.gamma_leak / e.leakage);
    }
    if e.power > w.p_max {
        s2 = s2.min(w.p_max / e.power);
    }
    let mut out = d.clone();
    out.w *= C64::from(s2.sqrt());
    out.c = mmse_from_gains(&eff.gains(&out.w), &cs.sigma2_user);
    out
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AltOptions {
    pub schedule: StepSchedule,
    pub dual0: DualState,
    pub t_max: usize,
    /// Stop once the objective improves by less than this for three
    /// consecutive iterations.
    pub tol: f64,
    pub csi: CsiOracle,
    /// Nesterov extrapolation on each block, with restart on ascent.
    pub accel: bool,
    /// Set `c` to its MMSE value instead of taking a gradient step.
    pub closed_form_c: bool,
    /// Leave `c` at its initial value, e.g. `c = 1` for the equalizer-free
    /// power-transfer mode.
    pub fixed_c: bool,
    /// Keep `W` inside the power ball `‖W‖_F² ≤ P_max` by projection.
    pub project_power: bool,
}

impl Default for AltOptions {
    fn default() -> Self {
        AltOptions {
            schedule: StepSchedule::default(),
            dual0: DualState::default(),
            t_max: 100,
            tol: 1e-3,
            csi: CsiOracle::Exact,
            accel: false,
            closed_form_c: false,
            fixed_c: false,
            project_power: true,
        }
    }
}

impl AltOptions {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.dual0.validate()?;
        self.csi.validate()?;
        if self.closed_form_c && self.fixed_c {
            return Err(invalid("fixed_c", "conflicts with closed_form_c"));
        }
        if self.t_max == 0 {
            return Err(invalid("t_max", "at least one iteration"));
        }
        if !(self.tol >= 0.0) {
            return Err(invalid("tol", "must be nonnegative"));
        }
        Ok(())
    }
}

/// One iteration of the solver. Augmented-Lagrangian values are taken on the
/// true channel with the multipliers in force during the primal steps;
/// `l_aug_after_dual` uses the updated multipliers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub step: f64,
    pub l_aug_start: f64,
    pub l_aug_after_w: f64,
    pub l_aug_after_c: f64,
    pub l_aug_after_theta: f64,
    pub l_aug_after_dual: f64,
    pub objective: f64,
    pub sum_mse: f64,
    pub g1: f64,
    pub g2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub norm_dw: f64,
    pub norm_dc: f64,
    pub norm_dtheta: f64,
    /// Norm of the projected gradient mapping at the end of the iteration.
    pub stationarity: f64,
}

impl TraceRow {
    /// Largest increase of the augmented Lagrangian across the primal blocks.
    pub fn max_primal_increase(&self) -> f64 {
        [
            self.l_aug_after_w - self.l_aug_start,
            self.l_aug_after_c - self.l_aug_after_w,
            self.l_aug_after_theta - self.l_aug_after_c,
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OptTrace {
    pub rows: Vec<TraceRow>,
}

impl OptTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn max_primal_increase(&self) -> f64 {
        self.rows
            .iter()
            .map(TraceRow::max_primal_increase)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }
}

#[derive(Debug, Clone)]
pub struct AltOutcome {
    pub design: Design,
    pub dual: DualState,
    pub trace: OptTrace,
    /// Whether the improvement rule fired before `t_max`.
    pub converged: bool,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// Backtracking from `gamma`. `candidate(γ)` builds the trial point and
/// returns it with its value and the directional term `⟨∇L, x − x⁺⟩`.
/// Returns `None` when no trial step decreases the value.
fn backtrack<T>(
    gamma: f64,
    base: f64,
    mut candidate: impl FnMut(f64) -> (T, f64, f64),
) -> Option<(T, f64)> {
    let mut g = gamma;
    for _ in 0..MAX_HALVINGS {
        let (x, value, decrease) = candidate(g);
        if value.is_finite() && value <= base - ARMIJO_C * decrease.max(0.0) && value <= base {
            return Some((x, value));
        }
        g *= 0.5;
    }
    None
}

fn real_inner(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

fn project_power(w: &mut DMatrix<C64>, p_max: f64) {
    let p = w.norm_squared();
    if p > p_max {
        *w *= C64::from((p_max / p).sqrt());
    }
}

fn wrapped_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > std::f64::consts::PI {
        d - TAU
    } else {
        d
    }
}

struct Blocks {
    prev_w: Option<DMatrix<C64>>,
    prev_c: Option<DVector<C64>>,
    prev_theta: Option<DVector<f64>>,
    momentum_age: usize,
}

/// One block subproblem. Values of the augmented Lagrangian and the
/// constraints come from `measured` (feedback the transmitter observes);
/// gradients are formed on `csi`, the channel estimate.
struct Problem<'a> {
    measured: &'a ChannelSet,
    csi: &'a ChannelSet,
    weights: &'a Weights,
    dual: DualState,
}

impl Problem<'_> {
    fn value(&self, d: &Design) -> f64 {
        let eff = effective_unchecked(self.measured, &d.reflection());
        lagrangian_with(&eff, self.measured, d, self.weights, &self.dual)
    }

    fn multipliers(&self, d: &Design) -> (f64, f64) {
        let eff = effective_unchecked(self.measured, &d.reflection());
        let e = evaluate_with(&eff, self.measured, d, self.weights);
        self.dual.effective(e.g_leak, e.g_power)
    }

    fn grad_w(&self, d: &Design) -> DMatrix<C64> {
        let (l1, l2) = self.multipliers(d);
        let eff = effective_unchecked(self.csi, &d.reflection());
        grad_w_with(&eff, d, self.weights, l1, l2)
    }

    fn grad_c(&self, d: &Design) -> DVector<C64> {
        let eff = effective_unchecked(self.csi, &d.reflection());
        grad_c_with(&eff, self.csi, d)
    }

    fn grad_theta(&self, d: &Design) -> DVector<f64> {
        let (l1, _) = self.multipliers(d);
        grad_theta_with(self.csi, d, self.weights.lambda + l1)
    }

    fn step_w(&self, d: &Design, from: &Design, gamma: f64, project: bool) -> Option<(Design, f64)> {
        let base = self.value(from);
        let grad = self.grad_w(from);
        backtrack(gamma, base, |g| {
            let mut next = from.clone();
            next.w = &from.w - &grad * C64::from(g);
            if project {
                project_power(&mut next.w, self.weights.p_max);
            }
            let decrease = real_inner(&grad, &(&from.w - &next.w));
            let v = self.value(&next);
            (next, v, decrease)
        })
        .map(|(mut next, v)| {
            next.theta = d.theta.clone();
            next.c = d.c.clone();
            (next, v)
        })
    }

    fn step_c(&self, d: &Design, from: &Design, gamma: f64) -> Option<(Design, f64)> {
        let base = self.value(from);
        let grad = self.grad_c(from);
        backtrack(gamma, base, |g| {
            let mut next = from.clone();
            next.c = &from.c - &grad * C64::from(g);
            // Real gradient over (Re c, Im c) is 2·grad.
            let decrease = 2.0 * g * grad.norm_squared();
            let v = self.value(&next);
            (next, v, decrease)
        })
        .map(|(mut next, v)| {
            next.theta = d.theta.clone();
            next.w = d.w.clone();
            (next, v)
        })
    }

    fn step_theta(&self, d: &Design, from: &Design, gamma: f64) -> Option<(Design, f64)> {
        let base = self.value(from);
        let grad = self.grad_theta(from);
        backtrack(gamma, base, |g| {
            let mut next = from.clone();
            next.theta = project_phases(&(&from.theta - &grad * g));
            let decrease = g * grad.norm_squared();
            let v = self.value(&next);
            (next, v, decrease)
        })
        .map(|(mut next, v)| {
            next.w = d.w.clone();
            next.c = d.c.clone();
            (next, v)
        })
    }
}

fn check_finite(d: &Design, value: f64, iteration: usize, block: &str) -> Result<()> {
    if !d.is_finite() || !value.is_finite() {
        log::error!("non-finite iterate after {block} step at iteration {iteration}");
        return Err(Error::NonFinite {
            iteration,
            what: format!("{block} block"),
        });
    }
    Ok(())
}

/// Augmented-Lagrangian alternating projected gradient.
///
/// Each iteration takes a step on `W`, then `c` (or sets `c` to its MMSE
/// value), then `θ`, and finally updates the multipliers. Every block step
/// starts from the scheduled `γ_t` and halves it until the augmented
/// Lagrangian does not increase, so primal updates are monotone in exact
/// mode.
pub fn run_alternating<R: Rng + ?Sized>(
    cs: &ChannelSet,
    init: Design,
    weights: &Weights,
    opts: &AltOptions,
    rng: &mut R,
) -> Result<AltOutcome> {
    cs.validate()?;
    weights.validate()?;
    opts.validate()?;
    init.check(&cs.dims())?;

    let mut design = init;
    let mut dual = opts.dual0;
    let mut trace = OptTrace::default();
    let mut blocks = Blocks {
        prev_w: None,
        prev_c: None,
        prev_theta: None,
        momentum_age: 0,
    };
    let truth = |d: &Design, dual: &DualState| {
        let eff = effective_unchecked(cs, &d.reflection());
        (
            lagrangian_with(&eff, cs, d, weights, dual),
            evaluate_with(&eff, cs, d, weights),
        )
    };
    let mut prev_objective = truth(&design, &dual).1.objective;
    let mut small_steps = 0;
    let mut converged = false;

    for t in 0..opts.t_max {
        let gamma = opts.schedule.step(t);
        let est = opts.csi.estimate(cs, rng);
        let problem = Problem {
            measured: cs,
            csi: &est,
            weights,
            dual,
        };
        let (l_start, _) = truth(&design, &dual);
        check_finite(&design, l_start, t, "initial")?;
        let beta = if opts.accel {
            blocks.momentum_age += 1;
            (blocks.momentum_age as f64 - 1.0) / (blocks.momentum_age as f64 + 2.0)
        } else {
            0.0
        };

        // W block.
        let before_w = design.w.clone();
        let mut moved = None;
        if let (true, Some(prev)) = (beta > 0.0, &blocks.prev_w) {
            let mut y = design.clone();
            y.w = &design.w + (&design.w - prev) * C64::from(beta);
            if opts.project_power {
                project_power(&mut y.w, weights.p_max);
            }
            moved = problem
                .step_w(&design, &y, gamma, opts.project_power)
                .filter(|(_, v)| *v <= problem.value(&design));
            if moved.is_none() {
                blocks.momentum_age = 0;
            }
        }
        if moved.is_none() {
            moved = problem.step_w(&design, &design, gamma, opts.project_power);
        }
        if let Some((next, _)) = moved {
            design = next;
        }
        blocks.prev_w = Some(before_w.clone());
        let (l_w, _) = truth(&design, &dual);
        check_finite(&design, l_w, t, "W")?;

        // c block.
        let before_c = design.c.clone();
        if opts.closed_form_c {
            let eff = effective_unchecked(&est, &design.reflection());
            design.c = mmse_from_gains(&eff.gains(&design.w), &est.sigma2_user);
        } else if !opts.fixed_c {
            let mut moved = None;
            if let (true, Some(prev)) = (beta > 0.0, &blocks.prev_c) {
                let mut y = design.clone();
                y.c = &design.c + (&design.c - prev) * C64::from(beta);
                moved = problem
                    .step_c(&design, &y, gamma)
                    .filter(|(_, v)| *v <= problem.value(&design));
            }
            if moved.is_none() {
                moved = problem.step_c(&design, &design, gamma);
            }
            if let Some((next, _)) = moved {
                design = next;
            }
        }
        blocks.prev_c = Some(before_c.clone());
        let (l_c, _) = truth(&design, &dual);
        check_finite(&design, l_c, t, "c")?;

        // θ block.
        let before_theta = design.theta.clone();
        let mut moved = None;
        if let (true, Some(prev)) = (beta > 0.0, &blocks.prev_theta) {
            let mut y = design.clone();
            y.theta = project_phases(&DVector::from_fn(prev.len(), |n, _| {
                design.theta[n] + beta * wrapped_diff(design.theta[n], prev[n])
            }));
            moved = problem
                .step_theta(&design, &y, gamma)
                .filter(|(_, v)| *v <= problem.value(&design));
        }
        if moved.is_none() {
            moved = problem.step_theta(&design, &design, gamma);
        }
        if let Some((next, _)) = moved {
            design = next;
        }
        blocks.prev_theta = Some(before_theta.clone());
        let (l_theta, _) = truth(&design, &dual);
        check_finite(&design, l_theta, t, "theta")?;

        let g = truth(&design, &dual).1;
        dual = dual_update(&dual, g.g_leak, g.g_power);
        let (l_dual, eval) = truth(&design, &dual);

        let stationarity = {
            let p = Problem {
                measured: cs,
                csi: cs,
                weights,
                dual,
            };
            let gw = p.grad_w(&design);
            let mut w_next = &design.w - &gw * C64::from(gamma);
            if opts.project_power {
                project_power(&mut w_next, weights.p_max);
            }
            let mapped_w = (&design.w - w_next).norm_squared() / (gamma * gamma);
            let gc = 4.0 * p.grad_c(&design).norm_squared();
            let gt = p.grad_theta(&design).norm_squared();
            (mapped_w + gc + gt).sqrt()
        };

        trace.rows.push(TraceRow {
            iteration: t,
            step: gamma,
            l_aug_start: l_start,
            l_aug_after_w: l_w,
            l_aug_after_c: l_c,
            l_aug_after_theta: l_theta,
            l_aug_after_dual: l_dual,
            objective: eval.objective,
            sum_mse: eval.sum_mse,
            g1: eval.g_leak,
            g2: eval.g_power,
            lambda1: dual.lambda1,
            lambda2: dual.lambda2,
            norm_dw: (&design.w - &before_w).norm(),
            norm_dc: (&design.c - &before_c).norm(),
            norm_dtheta: DVector::from_fn(before_theta.len(), |n, _| {
                wrapped_diff(design.theta[n], before_theta[n])
            })
            .norm(),
            stationarity,
        });

        if prev_objective - eval.objective < opts.tol {
            small_steps += 1;
        } else {
            small_steps = 0;
        }
        prev_objective = eval.objective;
        if small_steps >= 3 {
            converged = true;
            break;
        }
    }

    Ok(AltOutcome {
        design,
        dual,
        trace,
        converged,
    })
}

/// How well `C / t` bounds the optimality gap of a value sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeFit {
    /// Fitted constant, the largest `t · gap_t` over `t ∈ [5, 10]`.
    pub c: f64,
    /// Fraction of iterations `t ≥ 5` with `gap_t ≤ C / t`.
    pub captured: f64,
}

/// Empirical check of a `C/t` decay of `values[t] − values[last]`.
/// Returns `None` for sequences shorter than six entries.
pub fn sublinear_envelope(values: &[f64]) -> Option<EnvelopeFit> {
    if values.len() < 6 {
        return None;
    }
    let last = *values.last().unwrap();
    let gap = |t: usize| (values[t] - last).max(0.0);
    let window_end = values.len().min(11);
    let c = (5..window_end).map(|t| t as f64 * gap(t)).fold(0.0, f64::max);
    let tail: Vec<usize> = (5..values.len()).collect();
    let hits = tail
        .iter()
        .filter(|&&t| gap(t) <= c / t as f64 + 1e-12)
        .count();
    Some(EnvelopeFit {
        c,
        captured: hits as f64 / tail.len() as f64,
    })
}
