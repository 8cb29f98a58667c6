//! Exact and inexact minibatch-prox outer loops with their stepsize and
//! tolerance schedules, iterate averaging and per-step certificates.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{draw_minibatch, rng_from_seed, stream_rng, DataSource, SimRng};
use crate::error::{check_dim, invalid, Error, Result};
use crate::losses::{batch_value, exact_tol, minimize, project, Domain, DomainKind, LossModel, Minibatch, ProxObjective};
use crate::metrics::{default_stride, objective_gap_ls, RunReport, StepRecord};
use crate::vector::{dist_sq, norm, norm_sq, sub};

/// Stream reserved for reference points so data draws are unaffected.
const REFERENCE_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    WeaklyConvexConst,
    StronglyConvexRamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxSchedule {
    pub mode: ScheduleMode,
    pub gamma_const: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub b: usize,
    pub lipschitz: f64,
    pub d0: f64,
    pub tol_c1: f64,
    pub tol_c2: f64,
    pub delta: f64,
}

impl ProxSchedule {
    /// `gamma = sqrt(8 T / b) L / D0` for every step.
    pub fn weakly_convex(horizon: usize, b: usize, lipschitz: f64, d0: f64) -> Result<Self> {
        Self::check_common(horizon, b, lipschitz)?;
        if !(d0 > 0.0) {
            return Err(invalid("d0", "must be positive"));
        }
        Ok(Self {
            mode: ScheduleMode::WeaklyConvexConst,
            gamma_const: (8.0 * horizon as f64 / b as f64).sqrt() * lipschitz / d0,
            lambda: 0.0,
            horizon,
            b,
            lipschitz,
            d0,
            tol_c1: 1e-4,
            tol_c2: 1e-4,
            delta: 0.5,
        })
    }

    /// `gamma_t = lambda (t - 1) / 2`.
    pub fn strongly_convex(horizon: usize, b: usize, lipschitz: f64, lambda: f64, d0: f64) -> Result<Self> {
        Self::check_common(horizon, b, lipschitz)?;
        if !(lambda > 0.0) {
            return Err(invalid("lambda", "ramp schedule needs lambda > 0"));
        }
        Ok(Self {
            mode: ScheduleMode::StronglyConvexRamp,
            gamma_const: 0.0,
            lambda,
            horizon,
            b,
            lipschitz,
            d0,
            tol_c1: 1e-4,
            tol_c2: 1e-4,
            delta: 0.5,
        })
    }

    fn check_common(horizon: usize, b: usize, lipschitz: f64) -> Result<()> {
        if horizon == 0 {
            return Err(invalid("T", "must be at least 1"));
        }
        if b == 0 {
            return Err(invalid("b", "must be at least 1"));
        }
        if !(lipschitz > 0.0) {
            return Err(invalid("L", "must be positive"));
        }
        Ok(())
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if self.mode != ScheduleMode::WeaklyConvexConst || !(gamma > 0.0) {
            return Err(invalid("gamma", "override needs the constant schedule and gamma > 0"));
        }
        self.gamma_const = gamma;
        Ok(self)
    }

    pub fn with_tolerance(mut self, c1: f64, c2: f64, delta: f64) -> Result<Self> {
        if !(c1 >= 0.0 && c2 >= 0.0 && delta > 0.0) {
            return Err(invalid("tolerance", "need c1, c2 >= 0 and delta > 0"));
        }
        self.tol_c1 = c1;
        self.tol_c2 = c2;
        self.delta = delta;
        Ok(self)
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.horizon {
            return Err(invalid("t", format!("{t} outside 1..={}", self.horizon)));
        }
        Ok(())
    }

    pub fn gamma_at(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(match self.mode {
            ScheduleMode::WeaklyConvexConst => self.gamma_const,
            ScheduleMode::StronglyConvexRamp => self.lambda * (t - 1) as f64 / 2.0,
        })
    }

    /// Suboptimality allowed for the step-`t` subproblem.
    pub fn eta_tolerance(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(invalid("t", "must be at least 1"));
        }
        let ratio = self.horizon as f64 / self.b as f64;
        let tf = t as f64;
        Ok(match self.mode {
            ScheduleMode::WeaklyConvexConst => {
                (self.tol_c1 * ratio.sqrt()).min(self.tol_c2 * ratio.powf(1.5)) * self.lipschitz * self.d0
                    / tf.powf(2.0 + 2.0 * self.delta)
            }
            ScheduleMode::StronglyConvexRamp => {
                if !(self.lambda > 0.0) {
                    return Err(invalid("lambda", "strongly convex tolerance needs lambda > 0"));
                }
                (self.tol_c1 * ratio).min(self.tol_c2 * ratio * ratio) * self.lipschitz * self.lipschitz
                    / (tf.powf(3.0 + 2.0 * self.delta) * self.lambda)
            }
        })
    }

    /// Averaging weight of `w_t`: `1 / T` or `2 t / (T (T + 1))`.
    pub fn averaging_weight(&self, t: usize) -> f64 {
        let big_t = self.horizon as f64;
        match self.mode {
            ScheduleMode::WeaklyConvexConst => 1.0 / big_t,
            ScheduleMode::StronglyConvexRamp => 2.0 * t as f64 / (big_t * (big_t + 1.0)),
        }
    }
}

/// Running weighted average of iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateAverage {
    sum: Vec<f64>,
    weight_sum: f64,
}

impl IterateAverage {
    pub fn new(d: usize) -> Self {
        Self {
            sum: vec![0.0; d],
            weight_sum: 0.0,
        }
    }

    pub fn push(&mut self, weight: f64, w: &[f64]) {
        for (s, v) in self.sum.iter_mut().zip(w) {
            *s += weight * v;
        }
        self.weight_sum += weight;
    }

    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }

    /// Normalized average of what has been pushed so far.
    pub fn current(&self) -> Vec<f64> {
        if self.weight_sum == 0.0 {
            return self.sum.clone();
        }
        self.sum.iter().map(|s| s / self.weight_sum).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxRunState {
    pub w: Vec<f64>,
    pub t: usize,
    pub average: IterateAverage,
}

impl ProxRunState {
    pub fn new(w0: Vec<f64>) -> Self {
        let d = w0.len();
        Self {
            w: w0,
            t: 0,
            average: IterateAverage::new(d),
        }
    }
}

/// Subproblem solver for inexact steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InnerSolver {
    Exact,
    /// `steps` projected gradient steps with stepsize `1 / smoothness`,
    /// started at `w_{t-1}`; no certificate.
    GradientDescent { steps: usize },
    /// Projected gradient until the certified gap is at most `eta_t`.
    CertifiedGradientDescent { max_steps: usize },
}

/// Outcome of one outer step. `fixed_point_residual` is
/// `gamma ||w_t - P(w_{t-1} - grad phi_I(w_t) / gamma)||`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub gamma: f64,
    pub eta: Option<f64>,
    pub achieved_gap: Option<f64>,
    pub fixed_point_residual: Option<f64>,
}

fn subproblem<'a>(
    batch: &'a Minibatch,
    model: &'a LossModel,
    gamma: f64,
    center: &[f64],
) -> Result<ProxObjective<'a>> {
    ProxObjective::new(batch, model, gamma, center)
}

fn fixed_point_residual(obj: &ProxObjective<'_>, domain: &Domain, w: &[f64]) -> Result<Option<f64>> {
    if !(obj.gamma > 0.0) {
        return Ok(None);
    }
    let g = crate::losses::batch_grad(obj.model, w, obj.batch)?;
    let stepped: Vec<f64> = obj.center.iter().zip(&g).map(|(c, gi)| c - gi / obj.gamma).collect();
    let p = project(domain, &stepped);
    Ok(Some(obj.gamma * norm(&sub(w, &p))))
}

fn finish_step(state: &mut ProxRunState, sched: &ProxSchedule, w: Vec<f64>) {
    state.average.push(sched.averaging_weight(state.t), &w);
    state.w = w;
}

/// `w_t = argmin phi_I(w) + (gamma_t / 2) ||w - w_{t-1}||^2` over the domain.
/// In ramp mode `gamma_1 = 0` and the step minimizes `phi_I` alone, which
/// is strongly convex through the ridge term.
pub fn exact_prox_step(
    state: &mut ProxRunState,
    sched: &ProxSchedule,
    batch: &Minibatch,
    model: &LossModel,
    domain: &Domain,
) -> Result<StepOutcome> {
    check_dim(state.w.len(), batch.dim())?;
    let t = state.t + 1;
    let gamma = sched.gamma_at(t)?;
    if gamma == 0.0 && !(model.lambda > 0.0) {
        return Err(invalid("gamma", "zero proximal weight needs a ridge term"));
    }
    let obj = subproblem(batch, model, gamma, &state.w)?;
    let tol = exact_tol(&obj);
    let w = minimize(&obj, domain, tol)?;
    let fp = fixed_point_residual(&obj, domain, &w)?;
    if let (Some(r), DomainKind::Unconstrained) = (fp, domain.kind) {
        if r > 10.0 * tol {
            return Err(Error::NotConverged(format!("fixed-point residual {r:.3e} at t = {t}")));
        }
    }
    state.t = t;
    finish_step(state, sched, w);
    Ok(StepOutcome {
        gamma,
        eta: None,
        achieved_gap: None,
        fixed_point_residual: fp,
    })
}

/// Gap certificate for the subproblem: the exact-minimizer oracle for
/// least squares, `||grad f||^2 / (2 mu)` otherwise.
fn certified_gap(obj: &ProxObjective<'_>, domain: &Domain, w: &[f64]) -> Result<f64> {
    if obj.model.is_least_squares() {
        objective_gap_ls(obj, domain, w)
    } else if domain.kind == DomainKind::Unconstrained {
        Ok(norm_sq(&obj.grad(w)?) / (2.0 * obj.strong_convexity()))
    } else {
        let r = crate::losses::stationarity_residual(obj, domain, w)?;
        Ok(r * r / (2.0 * obj.strong_convexity()))
    }
}

/// Floor below which a certificate cannot be resolved in double precision.
fn certification_floor(obj: &ProxObjective<'_>, center: &[f64]) -> Result<f64> {
    Ok(1e-12 * obj.value(center)?.abs().max(1.0))
}

/// Approximate step with suboptimality at most `eta_t`.
pub fn inexact_prox_step(
    state: &mut ProxRunState,
    sched: &ProxSchedule,
    batch: &Minibatch,
    model: &LossModel,
    domain: &Domain,
    inner: InnerSolver,
) -> Result<StepOutcome> {
    let t = state.t + 1;
    let eta = sched.eta_tolerance(t)?;
    if inner == InnerSolver::Exact {
        let center = state.w.clone();
        let mut out = exact_prox_step(state, sched, batch, model, domain)?;
        if model.is_least_squares() {
            let obj = subproblem(batch, model, out.gamma, &center)?;
            out.achieved_gap = Some(objective_gap_ls(&obj, domain, &state.w)?);
        }
        out.eta = Some(eta);
        return Ok(out);
    }
    check_dim(state.w.len(), batch.dim())?;
    let gamma = sched.gamma_at(t)?;
    let obj = subproblem(batch, model, gamma, &state.w)?;
    let step = 1.0 / obj.smoothness();
    let mut w = state.w.clone();
    let gd = |w: &mut Vec<f64>| -> Result<()> {
        let g = obj.grad(w)?;
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= step * gi;
        }
        domain.project_in_place(w);
        Ok(())
    };
    match inner {
        InnerSolver::Exact => unreachable!(),
        InnerSolver::GradientDescent { steps } => {
            for _ in 0..steps {
                gd(&mut w)?;
            }
        }
        InnerSolver::CertifiedGradientDescent { max_steps } => {
            let target = eta.max(certification_floor(&obj, &state.w)?);
            let mut k = 0;
            while certified_gap(&obj, domain, &w)? > target {
                if k == max_steps {
                    return Err(Error::NotConverged(format!(
                        "gradient descent could not certify eta = {eta:.3e} at t = {t} in {max_steps} steps"
                    )));
                }
                gd(&mut w)?;
                k += 1;
            }
        }
    }
    let achieved_gap = if model.is_least_squares() {
        Some(objective_gap_ls(&obj, domain, &w)?)
    } else {
        None
    };
    let fp = fixed_point_residual(&obj, domain, &w)?;
    state.t = t;
    finish_step(state, sched, w);
    Ok(StepOutcome {
        gamma,
        eta: Some(eta),
        achieved_gap,
        fixed_point_residual: fp,
    })
}

/// Right side minus left side of
/// `((lambda + gamma) / gamma) ||w_t - w_ref||^2 <= ||w_{t-1} - w_ref||^2
///   - ||w_{t-1} - w_t||^2 - (2 / gamma) (phi_I(w_t) - phi_I(w_ref))`.
/// Nonnegative (up to rounding) whenever `w_t` is the exact prox minimizer.
pub fn three_point_check(
    w_prev: &[f64],
    w_t: &[f64],
    w_ref: &[f64],
    batch: &Minibatch,
    gamma: f64,
    lambda: f64,
    model: &LossModel,
) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(invalid("gamma", "must be positive"));
    }
    let lhs = (lambda + gamma) / gamma * dist_sq(w_t, w_ref);
    let rhs = dist_sq(w_prev, w_ref)
        - dist_sq(w_prev, w_t)
        - 2.0 / gamma * (batch_value(model, w_t, batch)? - batch_value(model, w_ref, batch)?);
    Ok(rhs - lhs)
}

/// Magnitude of the terms in [`three_point_check`], for relative thresholds.
pub fn three_point_scale(
    w_prev: &[f64],
    w_t: &[f64],
    w_ref: &[f64],
    batch: &Minibatch,
    gamma: f64,
    lambda: f64,
    model: &LossModel,
) -> Result<f64> {
    let terms = [
        (lambda + gamma) / gamma * dist_sq(w_t, w_ref),
        dist_sq(w_prev, w_ref),
        dist_sq(w_prev, w_t),
        2.0 / gamma * batch_value(model, w_t, batch)?.abs(),
        2.0 / gamma * batch_value(model, w_ref, batch)?.abs(),
    ];
    Ok(terms.iter().fold(1.0_f64, |a, b| a.max(*b)))
}

/// Reference points for the per-step inequality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreePointReference {
    None,
    Fixed(Vec<f64>),
    /// A fresh uniform point in the ball of the domain radius each step.
    RandomInBall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxRunConfig {
    pub schedule: ProxSchedule,
    pub model: LossModel,
    pub domain: Domain,
    pub w0: Vec<f64>,
    pub inner: Option<InnerSolver>,
    pub seed: u64,
    pub three_point_reference: ThreePointReference,
    pub stride: Option<usize>,
}

/// Relative threshold for the per-step inequality.
pub const THREE_POINT_TOL: f64 = 1e-7;

fn random_in_ball(rng: &mut SimRng, d: usize, radius: f64) -> Vec<f64> {
    let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64) / norm(&g).max(f64::MIN_POSITIVE);
    g.into_iter().map(|v| v * r).collect()
}

/// Runs `T` outer steps on fresh minibatches and returns the averaged
/// iterate, uniform for the constant schedule and `t`-weighted for the
/// ramp.
pub fn run_minibatch_prox(cfg: &ProxRunConfig, source: &DataSource) -> Result<RunReport> {
    let sched = &cfg.schedule;
    check_dim(source.dim(), cfg.w0.len())?;
    let algo = if cfg.inner.is_some() { "inexact_prox" } else { "exact_prox" };
    let mut report = RunReport::new(algo, cfg.seed);
    report.config = serde_json::to_value(cfg).unwrap_or_default();
    report.set_param("T", sched.horizon as f64);
    report.set_param("b", sched.b as f64);
    report.set_param("L", cfg.model.lipschitz);
    let stride = cfg.stride.unwrap_or_else(|| default_stride(sched.horizon));
    let mut rng = rng_from_seed(cfg.seed);
    let mut ref_rng = stream_rng(cfg.seed, REFERENCE_STREAM);
    let mut state = ProxRunState::new(cfg.w0.clone());
    let synthetic = source.synthetic().is_some();
    for t in 1..=sched.horizon {
        let batch = draw_minibatch(source, sched.b, &mut rng)?;
        let w_prev = state.w.clone();
        let out = match cfg.inner {
            None => exact_prox_step(&mut state, sched, &batch, &cfg.model, &cfg.domain)?,
            Some(inner) => inexact_prox_step(&mut state, sched, &batch, &cfg.model, &cfg.domain, inner)?,
        };
        let w_ref = match &cfg.three_point_reference {
            ThreePointReference::None => None,
            ThreePointReference::Fixed(w) => Some(w.clone()),
            ThreePointReference::RandomInBall => Some(random_in_ball(&mut ref_rng, cfg.w0.len(), cfg.domain.radius)),
        };
        let mut three_point_residual = None;
        if let (Some(w_ref), true) = (w_ref, out.gamma > 0.0) {
            let lambda = cfg.model.lambda;
            let res = three_point_check(&w_prev, &state.w, &w_ref, &batch, out.gamma, lambda, &cfg.model)?;
            let scale = three_point_scale(&w_prev, &state.w, &w_ref, &batch, out.gamma, lambda, &cfg.model)?;
            if cfg.inner.is_none() || cfg.inner == Some(InnerSolver::Exact) {
                report.check_lower("three_point", t, res, -THREE_POINT_TOL * scale);
            }
            three_point_residual = Some(res);
        }
        if let (Some(gap), Some(eta)) = (out.achieved_gap, out.eta) {
            if matches!(cfg.inner, Some(InnerSolver::CertifiedGradientDescent { .. })) {
                report.check_upper("inner_gap", t, gap, eta.max(1e-12));
            }
        }
        let record = t % stride == 0 || t == sched.horizon;
        let subopt = if record && synthetic {
            Some(source.evaluate(&cfg.model, &state.average.current())?)
        } else {
            None
        };
        if record {
            report.trajectory.push((t, state.w.clone()));
            if let Some(s) = subopt {
                report.subopt_series.push(((t * sched.b) as u64, s));
            }
        }
        report.steps.push(StepRecord {
            t,
            gamma: out.gamma,
            eta: out.eta,
            achieved_gap: out.achieved_gap,
            subopt,
            three_point_residual,
        });
    }
    report.w_hat = state.average.current();
    report.w_last = state.w.clone();
    report.final_subopt = Some(source.evaluate(&cfg.model, &report.w_hat)?);
    Ok(report)
}
