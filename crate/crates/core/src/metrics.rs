//! Run reports, sweep aggregation, rate fitting and the Monte-Carlo and
//! exact-minimizer oracles used to verify expectation bounds.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cluster::ResourceLedger;
use crate::data::{draw_minibatch, population_objective, rng_from_seed, DataSource, SyntheticLSSpec};
use crate::error::{invalid, Error, Result};
use crate::losses::{batch_value, exact_tol, minimize, Domain, DomainKind, LossModel, Minibatch, ProxObjective};

/// One outer iteration as recorded by a solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub gamma: f64,
    pub eta: Option<f64>,
    pub achieved_gap: Option<f64>,
    pub subopt: Option<f64>,
    pub three_point_residual: Option<f64>,
}

/// A named check evaluated during a run. `passed` is `value <= bound`
/// for upper-bound checks and `value >= bound` for lower-bound checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantRecord {
    pub name: String,
    pub t: usize,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algo: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Scalar parameters the solver actually used (T, K, R, p, gamma, ...).
    pub params: BTreeMap<String, f64>,
    pub w_hat: Vec<f64>,
    pub w_last: Vec<f64>,
    pub trajectory: Vec<(usize, Vec<f64>)>,
    pub subopt_series: Vec<(u64, f64)>,
    pub final_subopt: Option<f64>,
    pub steps: Vec<StepRecord>,
    pub ledger: Option<ResourceLedger>,
    pub invariant_log: Vec<InvariantRecord>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(algo: &str, seed: u64) -> Self {
        Self {
            algo: algo.to_string(),
            seed,
            ..Default::default()
        }
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    pub fn set_param(&mut self, name: &str, value: f64) {
        self.params.insert(name.to_string(), value);
    }

    pub fn check_upper(&mut self, name: &str, t: usize, value: f64, bound: f64) -> bool {
        let passed = value <= bound;
        self.invariant_log.push(InvariantRecord {
            name: name.to_string(),
            t,
            value,
            bound,
            passed,
        });
        passed
    }

    pub fn check_lower(&mut self, name: &str, t: usize, value: f64, bound: f64) -> bool {
        let passed = value >= bound;
        self.invariant_log.push(InvariantRecord {
            name: name.to_string(),
            t,
            value,
            bound,
            passed,
        });
        passed
    }

    /// Exact identity; used for resource accounting.
    pub fn check_equal(&mut self, name: &str, t: usize, value: f64, expected: f64) -> bool {
        let passed = value == expected;
        self.invariant_log.push(InvariantRecord {
            name: name.to_string(),
            t,
            value,
            bound: expected,
            passed,
        });
        passed
    }

    pub fn violations(&self) -> Vec<&InvariantRecord> {
        self.invariant_log.iter().filter(|r| !r.passed).collect()
    }

    pub fn invariants_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a InvariantRecord> + 'a {
        self.invariant_log.iter().filter(move |r| r.name == name)
    }

    /// Per-iteration rows: `t,gamma_t,eta_t,achieved_gap,subopt,three_point_residual`.
    pub fn steps_csv(&self) -> String {
        let mut out = String::from("t,gamma_t,eta_t,achieved_gap,subopt,three_point_residual\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for s in &self.steps {
            writeln!(
                out,
                "{},{:e},{},{},{},{}",
                s.t,
                s.gamma,
                opt(s.eta),
                opt(s.achieved_gap),
                opt(s.subopt),
                opt(s.three_point_residual)
            )
            .unwrap();
        }
        out
    }

    /// JSON summary without the bulky per-step vectors.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "algo": self.algo,
            "seed": self.seed,
            "config": self.config,
            "params": self.params,
            "final_subopt": self.final_subopt,
            "ledger": self.ledger,
            "violations": self.violations().len(),
            "warnings": self.warnings,
        })
    }
}

/// Trajectory sampling stride `max(1, T / 200)`.
pub fn default_stride(horizon: usize) -> usize {
    (horizon / 200).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub label: String,
    pub points: Vec<SweepPoint>,
}

pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

impl SweepResult {
    /// Aggregates per-seed results at each axis value.
    pub fn from_samples(axis: &str, label: &str, samples: &[(f64, Vec<f64>)]) -> Self {
        let points = samples
            .iter()
            .map(|(value, xs)| {
                let (mean, stderr) = mean_and_stderr(xs);
                SweepPoint {
                    value: *value,
                    mean,
                    stderr,
                    n_seeds: xs.len(),
                }
            })
            .collect();
        Self {
            axis: axis.to_string(),
            label: label.to_string(),
            points,
        }
    }

    pub const CSV_HEADER: &'static str = "label,axis,value,mean,stderr,n_seeds";

    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{:e},{:e},{}",
                self.label, self.axis, p.value, p.mean, p.stderr, p.n_seeds
            )
            .unwrap();
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::CSV_HEADER, self.csv_rows())
    }

    /// Parses the output of [`SweepResult::to_csv`] (one label only).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == Self::CSV_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "missing sweep header".into(),
                })
            }
        }
        let mut axis = String::new();
        let mut label = String::new();
        let mut points = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            label = f[0].to_string();
            axis = f[1].to_string();
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("non-numeric field"));
            points.push(SweepPoint {
                value: num(f[2])?,
                mean: num(f[3])?,
                stderr: num(f[4])?,
                n_seeds: f[5].parse().map_err(|_| bad("non-integer seed count"))?,
            });
        }
        Ok(Self { axis, label, points })
    }
}

/// OLS slope of `ln(mean)` against `ln(value)` and its standard error.
pub fn fit_rate_slope(sweep: &SweepResult) -> Result<(f64, f64)> {
    if sweep.points.len() < 4 {
        return Err(invalid("sweep", "need at least 4 points"));
    }
    if sweep.points.iter().any(|p| !(p.mean > 0.0) || !(p.value > 0.0)) {
        return Err(invalid("sweep", "means and axis values must be positive"));
    }
    let xs: Vec<f64> = sweep.points.iter().map(|p| p.value.ln()).collect();
    let ys: Vec<f64> = sweep.points.iter().map(|p| p.mean.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - my - slope * (x - mx);
            r * r
        })
        .sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    Ok((slope, stderr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    /// Mean and standard error of `phi(w_t) - phi_I(w_t)`.
    pub mean: f64,
    pub se: f64,
    /// `4 L^2 / ((lambda + gamma) b)`.
    pub bound: f64,
    /// Same gap minus the zero-mean term `phi(w_prev) - phi_I(w_prev)`.
    pub cv_mean: f64,
    pub cv_se: f64,
    pub trials: usize,
}

/// Draws `trials` fresh minibatches at a fixed `w_prev`, solves each exact
/// prox, and compares population against empirical objective.
pub fn stability_bound_check(
    spec: &SyntheticLSSpec,
    model: &LossModel,
    w_prev: &[f64],
    gamma: f64,
    b: usize,
    trials: usize,
    seed: u64,
) -> Result<StabilityResult> {
    if trials < 2 {
        return Err(invalid("trials", "need at least 2"));
    }
    let source = DataSource::Synthetic(spec.clone());
    let domain = Domain::unconstrained(1.0)?;
    let mut rng = rng_from_seed(seed);
    let phi_prev = population_objective(spec, model.lambda, w_prev)?;
    let mut gaps = Vec::with_capacity(trials);
    let mut cv = Vec::with_capacity(trials);
    for _ in 0..trials {
        let batch = draw_minibatch(&source, b, &mut rng)?;
        let obj = ProxObjective::new(&batch, model, gamma, w_prev)?;
        let w = minimize(&obj, &domain, exact_tol(&obj))?;
        let gap = population_objective(spec, model.lambda, &w)? - batch_value(model, &w, &batch)?;
        let control = phi_prev - batch_value(model, w_prev, &batch)?;
        gaps.push(gap);
        cv.push(gap - control);
    }
    let (mean, se) = mean_and_stderr(&gaps);
    let (cv_mean, cv_se) = mean_and_stderr(&cv);
    Ok(StabilityResult {
        mean,
        se,
        bound: 4.0 * model.lipschitz * model.lipschitz / ((model.lambda + gamma) * b as f64),
        cv_mean,
        cv_se,
        trials,
    })
}

/// `f(w) - min f` for `f = phi_I + (gamma / 2) ||. - center||^2` on least
/// squares, with the minimizer from the exact solve.
pub fn inner_gap_oracle_ls(
    model: &LossModel,
    batch: &Minibatch,
    gamma: f64,
    center: &[f64],
    domain: &Domain,
    w_candidate: &[f64],
) -> Result<f64> {
    let obj = ProxObjective::new(batch, model, gamma, center)?;
    objective_gap_ls(&obj, domain, w_candidate)
}

/// [`inner_gap_oracle_ls`] for an arbitrary prox objective.
pub fn objective_gap_ls(obj: &ProxObjective<'_>, domain: &Domain, w_candidate: &[f64]) -> Result<f64> {
    if !obj.model.is_least_squares() {
        return Err(Error::Unsupported("exact gap oracle requires least squares".into()));
    }
    let w_bar = minimize(obj, domain, exact_tol(obj))?;
    match domain.kind {
        DomainKind::Unconstrained => obj.ls_quadratic_gap(w_candidate, &w_bar),
        DomainKind::Ball => {
            if domain.contains(&w_bar) && crate::vector::norm(&w_bar) < domain.radius * (1.0 - 1e-9) {
                obj.ls_quadratic_gap(w_candidate, &w_bar)
            } else {
                Ok(obj.value(w_candidate)? - obj.value(&w_bar)?)
            }
        }
    }
}
