//! Sample oracles: a planted least-squares distribution with an analytic
//! population objective, and file-backed datasets resampled with replacement.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::losses::{LossKind, LossModel, Minibatch, Sample};
use crate::vector::{dot, norm};

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Stream `index` of the run generator. Stream 0 is the run generator
/// itself, so machine 0 of a cluster sees the same draws as a serial run.
pub fn stream_rng(seed: u64, index: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// How feature vectors are drawn. Both laws satisfy `||x||^2 = beta` and
/// have a diagonal second moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLaw {
    /// Uniform on the sphere of radius `sqrt(beta)`; `Sigma = (beta / d) I`.
    Sphere,
    /// `x = +-sqrt(beta) e_J` with `P(J = j) = weights[j] / sum(weights)`;
    /// `Sigma = beta diag(p)`.
    Coordinate { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLSSpec {
    pub d: usize,
    pub w_star: Vec<f64>,
    pub beta: f64,
    pub sigma: f64,
    pub seed: u64,
    pub law: FeatureLaw,
}

impl SyntheticLSSpec {
    pub fn sphere(w_star: Vec<f64>, beta: f64, sigma: f64, seed: u64) -> Result<Self> {
        Self::new(w_star, beta, sigma, seed, FeatureLaw::Sphere)
    }

    pub fn new(w_star: Vec<f64>, beta: f64, sigma: f64, seed: u64, law: FeatureLaw) -> Result<Self> {
        let d = w_star.len();
        if d == 0 {
            return Err(invalid("d", "must be at least 1"));
        }
        if !(beta > 0.0) {
            return Err(invalid("beta", "must be positive"));
        }
        if !(sigma >= 0.0) {
            return Err(invalid("sigma", "must be non-negative"));
        }
        if let FeatureLaw::Coordinate { weights } = &law {
            check_dim(d, weights.len())?;
            if weights.iter().any(|w| !(*w > 0.0)) {
                return Err(invalid("weights", "must all be positive"));
            }
        }
        Ok(Self {
            d,
            w_star,
            beta,
            sigma,
            seed,
            law,
        })
    }

    /// `w*_j = scale / sqrt(d)` for every `j`, so `||w*|| = scale`.
    pub fn flat_w_star(d: usize, scale: f64) -> Vec<f64> {
        vec![scale / (d as f64).sqrt(); d]
    }

    /// Diagonal of the feature second moment.
    pub fn covariance_diag(&self) -> Vec<f64> {
        match &self.law {
            FeatureLaw::Sphere => vec![self.beta / self.d as f64; self.d],
            FeatureLaw::Coordinate { weights } => {
                let total: f64 = weights.iter().sum();
                weights.iter().map(|w| self.beta * w / total).collect()
            }
        }
    }

    /// Bound on `|y|`.
    pub fn y_max(&self) -> f64 {
        self.beta.sqrt() * norm(&self.w_star) + self.sigma
    }

    /// Least-squares model with the Lipschitz constant taken over iterates
    /// of norm at most `iterate_bound`.
    pub fn model(&self, iterate_bound: f64, lambda: f64) -> Result<LossModel> {
        LossModel::least_squares(self.beta, self.y_max(), iterate_bound, lambda)
    }

    /// Iterate-norm bound used for the Lipschitz constant: the radius for a
    /// ball domain, `B + ||w*|| + 1` otherwise.
    pub fn iterate_bound(&self, radius: f64, ball: bool) -> f64 {
        if ball {
            radius
        } else {
            radius + norm(&self.w_star) + 1.0
        }
    }

    fn draw_sample(&self, sampler: &FeatureSampler, rng: &mut SimRng) -> Sample {
        let x = match sampler {
            FeatureSampler::Sphere => {
                let g: Vec<f64> = (0..self.d).map(|_| StandardNormal.sample(rng)).collect();
                let scale = self.beta.sqrt() / norm(&g);
                g.into_iter().map(|v| v * scale).collect()
            }
            FeatureSampler::Coordinate(index) => {
                let j = index.sample(rng);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut x = vec![0.0; self.d];
                x[j] = sign * self.beta.sqrt();
                x
            }
        };
        let noise = if self.sigma > 0.0 {
            rng.random_range(-self.sigma..=self.sigma)
        } else {
            0.0
        };
        let y = dot(&self.w_star, &x) + noise;
        Sample::new(x, y)
    }
}

enum FeatureSampler {
    Sphere,
    Coordinate(WeightedIndex<f64>),
}

fn sampler_for(spec: &SyntheticLSSpec) -> Result<FeatureSampler> {
    match &spec.law {
        FeatureLaw::Sphere => Ok(FeatureSampler::Sphere),
        FeatureLaw::Coordinate { weights } => WeightedIndex::new(weights.iter().copied())
            .map(FeatureSampler::Coordinate)
            .map_err(|e| invalid("weights", e.to_string())),
    }
}

/// Population objective of the planted source under a model with ridge
/// weight `lambda`: `E[l(w, xi)] + (lambda / 2) ||w||^2`.
pub fn population_objective(spec: &SyntheticLSSpec, lambda: f64, w: &[f64]) -> Result<f64> {
    check_dim(spec.d, w.len())?;
    let cov = spec.covariance_diag();
    let quad: f64 = cov
        .iter()
        .zip(w.iter().zip(&spec.w_star))
        .map(|(s, (a, b))| s * (a - b) * (a - b))
        .sum();
    let ridge: f64 = w.iter().map(|v| v * v).sum();
    Ok(0.5 * quad + spec.sigma * spec.sigma / 6.0 + 0.5 * lambda * ridge)
}

/// Minimizer of [`population_objective`]: `(Sigma + lambda I)^{-1} Sigma w*`.
pub fn population_minimizer(spec: &SyntheticLSSpec, lambda: f64) -> Vec<f64> {
    spec.covariance_diag()
        .iter()
        .zip(&spec.w_star)
        .map(|(s, w)| s * w / (s + lambda))
        .collect()
}

/// `phi(w) - min phi` in closed form, `0.5 (w - w_l)^T (Sigma + lambda I) (w - w_l)`.
pub fn population_suboptimality(spec: &SyntheticLSSpec, lambda: f64, w: &[f64]) -> Result<f64> {
    check_dim(spec.d, w.len())?;
    let opt = population_minimizer(spec, lambda);
    Ok(0.5
        * spec
            .covariance_diag()
            .iter()
            .zip(w.iter().zip(&opt))
            .map(|(s, (a, b))| (s + lambda) * (a - b) * (a - b))
            .sum::<f64>())
}

pub fn population_suboptimality_ls(spec: &SyntheticLSSpec, w: &[f64]) -> Result<f64> {
    population_suboptimality(spec, 0.0, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Libsvm,
    Csv { header: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub format: DataFormat,
    pub loss: LossKind,
    pub split_seed: u64,
}

/// A dataset split in half: draws come with replacement from `train`,
/// evaluation uses `eval`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
    pub d: usize,
}

impl Dataset {
    pub fn load(spec: DatasetSpec) -> Result<Self> {
        let samples = match spec.format {
            DataFormat::Libsvm => read_libsvm(&spec.path)?,
            DataFormat::Csv { header } => read_csv(&spec.path, header)?,
        };
        Self::from_samples(spec, samples)
    }

    pub fn from_samples(spec: DatasetSpec, mut samples: Vec<Sample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::DataExhausted(format!(
                "{} samples cannot be split into train and eval halves",
                samples.len()
            )));
        }
        if spec.loss == LossKind::Logistic {
            map_labels_binary(&mut samples);
        }
        let d = samples.iter().map(Sample::dim).max().unwrap_or(0);
        for s in &mut samples {
            s.x.resize(d, 0.0);
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng_from_seed(spec.split_seed));
        let half = samples.len() / 2;
        let train = order[..half].iter().map(|&i| samples[i].clone()).collect();
        let eval = order[half..].iter().map(|&i| samples[i].clone()).collect();
        Ok(Self { spec, train, eval, d })
    }

    pub fn max_sq_norm(&self) -> f64 {
        self.train
            .iter()
            .chain(&self.eval)
            .map(|s| s.x.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn y_max(&self) -> f64 {
        self.train.iter().chain(&self.eval).map(|s| s.y.abs()).fold(0.0, f64::max)
    }

    /// Loss model for this dataset with iterates bounded by `iterate_bound`.
    pub fn model(&self, iterate_bound: f64, lambda: f64) -> Result<LossModel> {
        let beta = self.max_sq_norm().max(f64::MIN_POSITIVE);
        match self.spec.loss {
            LossKind::LeastSquares => LossModel::least_squares(beta, self.y_max(), iterate_bound, lambda),
            LossKind::Logistic => LossModel::logistic(beta, iterate_bound, lambda),
        }
    }
}

/// Two distinct labels map smaller to -1 and larger to +1; otherwise
/// positive labels map to +1 and the rest to -1.
pub fn map_labels_binary(samples: &mut [Sample]) {
    let distinct: BTreeSet<u64> = samples.iter().map(|s| s.y.to_bits()).collect();
    let values: Vec<f64> = distinct.into_iter().map(f64::from_bits).collect();
    if values.len() == 2 {
        let lo = values[0].min(values[1]);
        for s in samples {
            s.y = if s.y == lo { -1.0 } else { 1.0 };
        }
    } else {
        for s in samples {
            s.y = if s.y > 0.0 { 1.0 } else { -1.0 };
        }
    }
}

/// Mean loss of `w` over the evaluation half.
pub fn holdout_objective(dataset: &Dataset, model: &LossModel, w: &[f64]) -> Result<f64> {
    if dataset.eval.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_dim(dataset.d, w.len())?;
    let total: f64 = dataset.eval.iter().map(|s| model.value_unchecked(w, s)).sum();
    Ok(total / dataset.eval.len() as f64)
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic(SyntheticLSSpec),
    Dataset(Dataset),
}

impl DataSource {
    pub fn dim(&self) -> usize {
        match self {
            DataSource::Synthetic(s) => s.d,
            DataSource::Dataset(d) => d.d,
        }
    }

    pub fn synthetic(&self) -> Option<&SyntheticLSSpec> {
        match self {
            DataSource::Synthetic(s) => Some(s),
            DataSource::Dataset(_) => None,
        }
    }

    /// Suboptimality for synthetic sources, holdout objective otherwise.
    pub fn evaluate(&self, model: &LossModel, w: &[f64]) -> Result<f64> {
        match self {
            DataSource::Synthetic(s) => population_suboptimality(s, model.lambda, w),
            DataSource::Dataset(d) => holdout_objective(d, model, w),
        }
    }
}

/// `b` i.i.d. draws from the source.
pub fn draw_minibatch(source: &DataSource, b: usize, rng: &mut SimRng) -> Result<Minibatch> {
    if b == 0 {
        return Err(invalid("b", "must be at least 1"));
    }
    let samples = match source {
        DataSource::Synthetic(spec) => {
            let sampler = sampler_for(spec)?;
            (0..b).map(|_| spec.draw_sample(&sampler, rng)).collect()
        }
        DataSource::Dataset(data) => {
            if data.train.is_empty() {
                return Err(Error::DataExhausted("training split is empty".into()));
            }
            (0..b)
                .map(|_| data.train[rng.random_range(0..data.train.len())].clone())
                .collect()
        }
    };
    Minibatch::new(samples)
}

pub fn read_libsvm(path: &Path) -> Result<Vec<Sample>> {
    parse_libsvm(&std::fs::read_to_string(path)?)
}

/// Parses `label idx:val ...` lines with 1-based indices into dense
/// vectors of the largest observed index. Text after `#` is ignored.
pub fn parse_libsvm(text: &str) -> Result<Vec<Sample>> {
    let mut rows: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    let mut d = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("label {label_tok:?} is not a number"),
        })?;
        let mut pairs = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("token {tok:?} is not index:value"),
            })?;
            if idx == "qid" {
                continue;
            }
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("index {idx:?} is not a positive integer"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "indices are 1-based".into(),
                });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("value {val:?} is not a number"),
            })?;
            if !val.is_finite() || !label.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "non-finite value".into(),
                });
            }
            d = d.max(idx);
            pairs.push((idx, val));
        }
        rows.push((label, pairs));
    }
    Ok(rows
        .into_iter()
        .map(|(y, pairs)| {
            let mut x = vec![0.0; d];
            for (idx, val) in pairs {
                x[idx - 1] = val;
            }
            Sample::new(x, y)
        })
        .collect())
}

/// Writes nonzero features only, with shortest round-trip float formatting.
pub fn write_libsvm(samples: &[Sample]) -> String {
    let mut out = String::new();
    for s in samples {
        write!(out, "{}", s.y).unwrap();
        for (i, v) in s.x.iter().enumerate() {
            if *v != 0.0 {
                write!(out, " {}:{}", i + 1, v).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

/// Comma-separated rows; the last column is the label.
pub fn read_csv(path: &Path, header: bool) -> Result<Vec<Sample>> {
    parse_csv(&std::fs::read_to_string(path)?, header)
}

pub fn parse_csv(text: &str, header: bool) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    let mut d: Option<usize> = None;
    for (i, raw) in text.lines().enumerate().skip(usize::from(header)) {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|f| {
                let f = f.trim();
                f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                    line: i + 1,
                    msg: format!("field {f:?} is not a finite number"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() < 2 {
            return Err(Error::Parse {
                line: i + 1,
                msg: "need at least one feature and a label".into(),
            });
        }
        let width = *d.get_or_insert(values.len());
        if width != values.len() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected {width} fields, found {}", values.len()),
            });
        }
        let (x, y) = values.split_at(values.len() - 1);
        out.push(Sample::new(x.to_vec(), y[0]));
    }
    Ok(out)
}
