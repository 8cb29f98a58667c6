//! Instantaneous losses, minibatch objectives, projections and the exact
//! proximal solve used by every minibatch-prox variant.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{cholesky_solve, conjugate_gradient, DENSE_DIM_LIMIT};
use crate::vector::{axpy, dist_sq, dot, norm, norm_sq, sub};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    LeastSquares,
    Logistic,
}

/// An instantaneous loss `l(w, (x, y))` plus an optional ridge term
/// `(lambda / 2) ||w||^2`, together with the constants the schedules need.
///
/// `beta` bounds the Hessian of the data term, `lipschitz` bounds the
/// gradient norm over the iterate region, `lambda` is the ridge (and hence
/// strong-convexity) weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub kind: LossKind,
    pub lipschitz: f64,
    pub beta: f64,
    pub lambda: f64,
    pub y_max: f64,
}

impl LossModel {
    /// Least squares on features with `||x||^2 <= beta` and `|y| <= y_max`.
    ///
    /// The Lipschitz constant is taken over iterates with norm at most
    /// `iterate_bound`: `L = sqrt(beta) (sqrt(beta) R + y_max) + lambda R`.
    pub fn least_squares(beta: f64, y_max: f64, iterate_bound: f64, lambda: f64) -> Result<Self> {
        let lipschitz = beta.sqrt() * (beta.sqrt() * iterate_bound + y_max) + lambda * iterate_bound;
        Self::validated(LossModel {
            kind: LossKind::LeastSquares,
            lipschitz,
            beta,
            lambda,
            y_max,
        })
    }

    /// Logistic loss with labels in {-1, +1} and `||x||^2 <= feature_norm_sq`.
    pub fn logistic(feature_norm_sq: f64, iterate_bound: f64, lambda: f64) -> Result<Self> {
        Self::validated(LossModel {
            kind: LossKind::Logistic,
            lipschitz: feature_norm_sq.sqrt() + lambda * iterate_bound,
            beta: feature_norm_sq / 4.0,
            lambda,
            y_max: 1.0,
        })
    }

    fn validated(model: LossModel) -> Result<Self> {
        if !(model.lipschitz > 0.0) {
            return Err(invalid("lipschitz", "must be positive"));
        }
        if !(model.beta > 0.0) {
            return Err(invalid("beta", "must be positive"));
        }
        if !(model.lambda >= 0.0) {
            return Err(invalid("lambda", "must be non-negative"));
        }
        if model.lambda > model.beta {
            return Err(invalid("lambda", "must not exceed beta"));
        }
        Ok(model)
    }

    pub fn is_least_squares(&self) -> bool {
        self.kind == LossKind::LeastSquares
    }

    pub fn value(&self, w: &[f64], s: &Sample) -> Result<f64> {
        check_dim(w.len(), s.dim())?;
        Ok(self.value_unchecked(w, s))
    }

    pub fn grad(&self, w: &[f64], s: &Sample) -> Result<Vec<f64>> {
        check_dim(w.len(), s.dim())?;
        let mut g = vec![0.0; w.len()];
        self.accumulate_grad(w, s, 1.0, &mut g);
        Ok(g)
    }

    pub(crate) fn value_unchecked(&self, w: &[f64], s: &Sample) -> f64 {
        let margin = dot(w, &s.x);
        let data = match self.kind {
            LossKind::LeastSquares => 0.5 * (margin - s.y) * (margin - s.y),
            LossKind::Logistic => softplus(-s.y * margin),
        };
        if self.lambda > 0.0 {
            data + 0.5 * self.lambda * norm_sq(w)
        } else {
            data
        }
    }

    /// Scalar `c` with `grad l(w, s) = c x + lambda w`.
    pub(crate) fn grad_coeff(&self, w: &[f64], s: &Sample) -> f64 {
        let margin = dot(w, &s.x);
        match self.kind {
            LossKind::LeastSquares => margin - s.y,
            LossKind::Logistic => -s.y * sigmoid(-s.y * margin),
        }
    }

    /// `out += weight * grad l(w, s)`.
    pub(crate) fn accumulate_grad(&self, w: &[f64], s: &Sample, weight: f64, out: &mut [f64]) {
        let margin = dot(w, &s.x);
        let coeff = match self.kind {
            LossKind::LeastSquares => margin - s.y,
            LossKind::Logistic => -s.y * sigmoid(-s.y * margin),
        };
        axpy(weight * coeff, &s.x, out);
        if self.lambda > 0.0 {
            axpy(weight * self.lambda, w, out);
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn loss_value(model: &LossModel, w: &[f64], s: &Sample) -> Result<f64> {
    model.value(w, s)
}

pub fn loss_grad(model: &LossModel, w: &[f64], s: &Sample) -> Result<Vec<f64>> {
    model.grad(w, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Unconstrained,
    Ball,
}

/// The feasible set. `radius` is the ball radius, or for an unconstrained
/// domain the norm bound of the competitor class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub kind: DomainKind,
    pub radius: f64,
}

impl Domain {
    pub fn unconstrained(radius: f64) -> Result<Self> {
        Self::new(DomainKind::Unconstrained, radius)
    }

    pub fn ball(radius: f64) -> Result<Self> {
        Self::new(DomainKind::Ball, radius)
    }

    pub fn new(kind: DomainKind, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(invalid("radius", "must be positive"));
        }
        Ok(Self { kind, radius })
    }

    pub fn project_in_place(&self, w: &mut [f64]) {
        if self.kind == DomainKind::Ball {
            let n = norm(w);
            if n > self.radius {
                let s = self.radius / n;
                w.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        match self.kind {
            DomainKind::Unconstrained => true,
            DomainKind::Ball => norm(w) <= self.radius * (1.0 + 1e-12),
        }
    }
}

pub fn project(domain: &Domain, w: &[f64]) -> Vec<f64> {
    let mut out = w.to_vec();
    domain.project_in_place(&mut out);
    out
}

/// A nonempty, dimension-consistent set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minibatch {
    samples: Vec<Sample>,
}

impl Minibatch {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyBatch)?;
        let d = first.dim();
        for s in &samples {
            check_dim(d, s.dim())?;
        }
        Ok(Self { samples })
    }

    pub fn b(&self) -> usize {
        self.samples.len()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    /// Consecutive sub-batches of `size` samples each.
    pub fn split(&self, parts: usize) -> Result<Vec<Minibatch>> {
        if parts == 0 || !self.b().is_multiple_of(parts) {
            return Err(invalid("parts", format!("{parts} does not divide b = {}", self.b())));
        }
        let size = self.b() / parts;
        self.samples
            .chunks(size)
            .map(|c| Minibatch::new(c.to_vec()))
            .collect()
    }

    /// Largest squared feature norm in the batch.
    pub fn max_sq_norm(&self) -> f64 {
        self.samples.iter().map(|s| norm_sq(&s.x)).fold(0.0, f64::max)
    }
}

/// Mean loss over the batch.
pub fn batch_value(model: &LossModel, w: &[f64], batch: &Minibatch) -> Result<f64> {
    check_dim(batch.dim(), w.len())?;
    let total: f64 = batch.samples().iter().map(|s| model.value_unchecked(w, s)).sum();
    Ok(total / batch.b() as f64)
}

/// Mean gradient over the batch.
pub fn batch_grad(model: &LossModel, w: &[f64], batch: &Minibatch) -> Result<Vec<f64>> {
    check_dim(batch.dim(), w.len())?;
    let mut g = vec![0.0; w.len()];
    for s in batch.samples() {
        model.accumulate_grad(w, s, 1.0, &mut g);
    }
    let inv = 1.0 / batch.b() as f64;
    g.iter_mut().for_each(|v| *v *= inv);
    Ok(g)
}

/// Default absolute tolerance on the first-order residual of a prox solve.
pub fn default_prox_tol(rhs_norm: f64) -> f64 {
    1e-10 * rhs_norm.max(1.0)
}

/// `phi_I(w) + (gamma / 2) ||w - center||^2 + <linear, w> + offset`.
///
/// The DANE local objective and the catalyst-augmented problem are both of
/// this shape once their two quadratic anchors are merged.
#[derive(Debug, Clone)]
pub struct ProxObjective<'a> {
    pub batch: &'a Minibatch,
    pub model: &'a LossModel,
    pub gamma: f64,
    pub center: Vec<f64>,
    pub linear: Option<Vec<f64>>,
    offset: f64,
}

impl<'a> ProxObjective<'a> {
    pub fn new(batch: &'a Minibatch, model: &'a LossModel, gamma: f64, center: &[f64]) -> Result<Self> {
        check_dim(batch.dim(), center.len())?;
        if !(gamma >= 0.0) {
            return Err(invalid("gamma", "must be non-negative"));
        }
        Ok(Self {
            batch,
            model,
            gamma,
            center: center.to_vec(),
            linear: None,
            offset: 0.0,
        })
    }

    /// Adds `(kappa / 2) ||w - anchor||^2`. A zero `kappa` leaves the
    /// objective untouched bit for bit.
    pub fn with_anchor(mut self, kappa: f64, anchor: &[f64]) -> Result<Self> {
        check_dim(self.center.len(), anchor.len())?;
        if !(kappa >= 0.0) {
            return Err(invalid("kappa", "must be non-negative"));
        }
        if kappa == 0.0 {
            return Ok(self);
        }
        let total = self.gamma + kappa;
        let merged: Vec<f64> = self
            .center
            .iter()
            .zip(anchor)
            .map(|(c, a)| (self.gamma * c + kappa * a) / total)
            .collect();
        self.offset += 0.5 * self.gamma * kappa / total * dist_sq(&self.center, anchor);
        self.center = merged;
        self.gamma = total;
        Ok(self)
    }

    pub fn with_linear(mut self, linear: Vec<f64>) -> Result<Self> {
        check_dim(self.center.len(), linear.len())?;
        self.linear = Some(linear);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        let mut v = batch_value(self.model, w, self.batch)? + 0.5 * self.gamma * dist_sq(w, &self.center);
        if let Some(lin) = &self.linear {
            v += dot(lin, w);
        }
        Ok(v + self.offset)
    }

    pub fn grad(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut g = batch_grad(self.model, w, self.batch)?;
        for ((gi, wi), ci) in g.iter_mut().zip(w).zip(&self.center) {
            *gi += self.gamma * (wi - ci);
        }
        if let Some(lin) = &self.linear {
            axpy(1.0, lin, &mut g);
        }
        Ok(g)
    }

    /// Lower bound on the Hessian.
    pub fn strong_convexity(&self) -> f64 {
        self.gamma + self.model.lambda
    }

    /// Upper bound on the Hessian, from the batch's own feature norms.
    pub fn smoothness(&self) -> f64 {
        let data = match self.model.kind {
            LossKind::LeastSquares => self.batch.max_sq_norm(),
            LossKind::Logistic => 0.25 * self.batch.max_sq_norm(),
        };
        data + self.model.lambda + self.gamma
    }

    /// Right-hand side of the least-squares normal equations.
    fn ls_rhs(&self) -> Vec<f64> {
        let b = self.batch.b() as f64;
        let mut rhs = vec![0.0; self.dim()];
        for s in self.batch.samples() {
            axpy(s.y, &s.x, &mut rhs);
        }
        rhs.iter_mut().for_each(|v| *v /= b);
        axpy(self.gamma, &self.center, &mut rhs);
        if let Some(lin) = &self.linear {
            axpy(-1.0, lin, &mut rhs);
        }
        rhs
    }

    fn ls_gram(&self) -> DMatrix<f64> {
        let d = self.dim();
        let b = self.batch.b() as f64;
        let mut a = DMatrix::<f64>::zeros(d, d);
        for s in self.batch.samples() {
            for i in 0..d {
                let xi = s.x[i];
                if xi == 0.0 {
                    continue;
                }
                for j in 0..d {
                    a[(i, j)] += xi * s.x[j];
                }
            }
        }
        a /= b;
        let diag = self.model.lambda + self.gamma;
        for i in 0..d {
            a[(i, i)] += diag;
        }
        a
    }

    /// `H v` for the least-squares objective, matrix-free.
    fn ls_hess_vec(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let inv_b = 1.0 / self.batch.b() as f64;
        for s in self.batch.samples() {
            axpy(inv_b * dot(&s.x, v), &s.x, out);
        }
        axpy(self.model.lambda + self.gamma, v, out);
    }

    fn logistic_hess_vec(&self, w: &[f64], v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let inv_b = 1.0 / self.batch.b() as f64;
        for s in self.batch.samples() {
            let m = s.y * dot(w, &s.x);
            let c = sigmoid(m) * sigmoid(-m);
            axpy(inv_b * c * dot(&s.x, v), &s.x, out);
        }
        axpy(self.model.lambda + self.gamma, v, out);
    }
}

impl ProxObjective<'_> {
    /// `f(w) - f(w_bar)` for least squares as the exact quadratic form
    /// `0.5 (w - w_bar)^T H (w - w_bar)`, valid when `w_bar` is the
    /// unconstrained minimizer. Free of the cancellation a value
    /// difference suffers near the optimum.
    pub fn ls_quadratic_gap(&self, w: &[f64], w_bar: &[f64]) -> Result<f64> {
        if !self.model.is_least_squares() {
            return Err(Error::Unsupported("quadratic gap requires least squares".into()));
        }
        check_dim(self.dim(), w.len())?;
        check_dim(self.dim(), w_bar.len())?;
        let e = sub(w, w_bar);
        let mut he = vec![0.0; e.len()];
        self.ls_hess_vec(&e, &mut he);
        Ok(0.5 * dot(&e, &he))
    }
}

/// Minimizes a prox objective over `domain` to first-order residual `tol`.
///
/// Least squares: dense Cholesky for `d <= 256` (polished with CG when the
/// residual is above `tol`), CG otherwise. Logistic: Newton. A ball domain
/// whose unconstrained minimizer lies outside falls back to accelerated
/// projected gradient until the gradient-mapping norm is at most `tol`.
pub fn minimize(obj: &ProxObjective<'_>, domain: &Domain, tol: f64) -> Result<Vec<f64>> {
    let w = match obj.model.kind {
        LossKind::LeastSquares => solve_ls_unconstrained(obj, tol)?,
        LossKind::Logistic => newton_logistic(obj, tol)?,
    };
    if domain.contains(&w) {
        return Ok(w);
    }
    projected_gradient(obj, domain, project(domain, &w), tol)
}

fn solve_ls_unconstrained(obj: &ProxObjective<'_>, tol: f64) -> Result<Vec<f64>> {
    let rhs = obj.ls_rhs();
    let d = obj.dim();
    let mut w = if d <= DENSE_DIM_LIMIT {
        cholesky_solve(obj.ls_gram(), &rhs)?
    } else {
        obj.center.clone()
    };
    let mut hw = vec![0.0; d];
    obj.ls_hess_vec(&w, &mut hw);
    let residual = norm(&sub(&hw, &rhs));
    if residual > tol {
        conjugate_gradient(|v, out| obj.ls_hess_vec(v, out), &rhs, &mut w, tol, 10 * d + 100)?;
    }
    Ok(w)
}

fn newton_logistic(obj: &ProxObjective<'_>, tol: f64) -> Result<Vec<f64>> {
    let d = obj.dim();
    let mut w = obj.center.clone();
    for _ in 0..200 {
        let g = obj.grad(&w)?;
        if norm(&g) <= tol {
            return Ok(w);
        }
        let mut step = vec![0.0; d];
        let cg_tol = (1e-3 * norm(&g)).min(0.1 * tol).max(1e-300);
        let wc = w.clone();
        conjugate_gradient(|v, out| obj.logistic_hess_vec(&wc, v, out), &g, &mut step, cg_tol, 10 * d + 100)?;
        let f0 = obj.value(&w)?;
        let slope = dot(&g, &step);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = w.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            if obj.value(&cand)? <= f0 - 1e-4 * t * slope || t < 1e-12 {
                w = cand;
                break;
            }
            t *= 0.5;
        }
    }
    let r = norm(&obj.grad(&w)?);
    if r <= tol {
        Ok(w)
    } else {
        Err(Error::NotConverged(format!("Newton residual {r:.3e} > {tol:.3e}")))
    }
}

/// Norm of the gradient mapping `Lf (w - P(w - grad / Lf))`; zero exactly at
/// a constrained minimizer.
pub fn stationarity_residual(obj: &ProxObjective<'_>, domain: &Domain, w: &[f64]) -> Result<f64> {
    let lf = obj.smoothness();
    let g = obj.grad(w)?;
    let mut stepped: Vec<f64> = w.iter().zip(&g).map(|(a, gi)| a - gi / lf).collect();
    domain.project_in_place(&mut stepped);
    Ok(lf * norm(&sub(w, &stepped)))
}

fn projected_gradient(obj: &ProxObjective<'_>, domain: &Domain, start: Vec<f64>, tol: f64) -> Result<Vec<f64>> {
    let lf = obj.smoothness();
    let mu = obj.strong_convexity();
    let momentum = if mu > 0.0 {
        (lf.sqrt() - mu.sqrt()) / (lf.sqrt() + mu.sqrt())
    } else {
        0.9
    };
    let mut w = start;
    let mut prev = w.clone();
    for _ in 0..1_000_000 {
        let y: Vec<f64> = w.iter().zip(&prev).map(|(a, p)| a + momentum * (a - p)).collect();
        let g = obj.grad(&y)?;
        let mut next: Vec<f64> = y.iter().zip(&g).map(|(a, gi)| a - gi / lf).collect();
        domain.project_in_place(&mut next);
        prev = std::mem::replace(&mut w, next);
        if stationarity_residual(obj, domain, &w)? <= tol {
            return Ok(w);
        }
    }
    Err(Error::NotConverged("projected gradient budget exhausted".into()))
}

/// Exact minibatch prox for least squares:
/// `argmin_{w in domain} phi_I(w) + (gamma / 2) ||w - center||^2`.
pub fn prox_solve_ls(
    model: &LossModel,
    batch: &Minibatch,
    gamma: f64,
    center: &[f64],
    domain: &Domain,
    tol: f64,
) -> Result<Vec<f64>> {
    if !model.is_least_squares() {
        return Err(Error::Unsupported("exact prox solve requires least squares".into()));
    }
    if !(gamma > 0.0) {
        return Err(invalid("gamma", "must be positive"));
    }
    let obj = ProxObjective::new(batch, model, gamma, center)?;
    minimize(&obj, domain, tol)
}

/// Tolerance used for "exact" solves: scaled by the normal-equation
/// right-hand side for least squares, fixed at 1e-9 for logistic.
pub fn exact_tol(obj: &ProxObjective<'_>) -> f64 {
    match obj.model.kind {
        LossKind::LeastSquares => default_prox_tol(norm(&obj.ls_rhs())),
        LossKind::Logistic => 1e-9,
    }
}
