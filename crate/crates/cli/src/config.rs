//! Experiment configuration: a TOML file with top-level run keys and one
//! section per concern (`problem`, `budget`, `sweep`, and per-algorithm
//! overrides). Every table rejects unknown keys.

use std::path::PathBuf;

use proxsim_core::dist::LocalSolver;
use proxsim_core::losses::{DomainKind, LossKind};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, io_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    MpDsvrg,
    MpDane,
    ExactProx,
    InexactProx,
    MinibatchSgd,
    Dsvrg,
    Emso,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::MpDsvrg => "mp_dsvrg",
            Algo::MpDane => "mp_dane",
            Algo::ExactProx => "exact_prox",
            Algo::InexactProx => "inexact_prox",
            Algo::MinibatchSgd => "minibatch_sgd",
            Algo::Dsvrg => "dsvrg",
            Algo::Emso => "emso",
        }
    }

    /// Runs on a single machine only.
    pub fn is_serial(self) -> bool {
        matches!(self, Algo::ExactProx | Algo::InexactProx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    #[default]
    Synthetic,
    Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    #[default]
    Sphere,
    /// Signed scaled basis vectors with geometric coordinate weights.
    Coordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatKind {
    Libsvm,
    Csv,
    CsvHeader,
}

fn one() -> f64 {
    1.0
}

fn default_sigma() -> f64 {
    0.1
}

fn default_ratio() -> f64 {
    0.3
}

fn default_domain() -> DomainKind {
    DomainKind::Unconstrained
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub kind: ProblemKind,
    pub d: Option<usize>,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "one")]
    pub w_star_norm: f64,
    #[serde(default)]
    pub law: LawKind,
    /// Coordinate `j` is drawn with weight `ratio^j`.
    #[serde(default = "default_ratio")]
    pub coordinate_ratio: f64,
    #[serde(default)]
    pub data_seed: u64,
    /// Competitor radius `B`.
    #[serde(default = "one")]
    pub radius: f64,
    #[serde(default = "default_domain")]
    pub domain: DomainKind,
    #[serde(default)]
    pub lambda: f64,
    pub path: Option<PathBuf>,
    pub format: Option<FormatKind>,
    pub loss: Option<LossKind>,
    #[serde(default)]
    pub split_seed: u64,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    /// Total samples `n` drawn across all machines.
    pub n_eps: usize,
    pub b: usize,
    #[serde(default = "one_usize")]
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "b")]
    B,
    #[serde(rename = "n_eps")]
    NEps,
    #[serde(rename = "m")]
    M,
    #[serde(rename = "K")]
    K,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::B => "b",
            SweepAxis::NEps => "n_eps",
            SweepAxis::M => "m",
            SweepAxis::K => "K",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Weak,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerKind {
    Exact,
    GradientDescent,
    #[default]
    CertifiedGradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    #[default]
    None,
    RandomInBall,
    WStar,
}

fn default_inner_steps() -> usize {
    10
}

fn default_max_steps() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxOverrides {
    #[serde(default)]
    pub schedule: ScheduleKind,
    pub gamma: Option<f64>,
    /// Subproblem solver of `inexact_prox`.
    #[serde(default)]
    pub inner: InnerKind,
    #[serde(default = "default_inner_steps")]
    pub inner_steps: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    pub tol_c1: Option<f64>,
    pub tol_c2: Option<f64>,
    pub delta: Option<f64>,
    #[serde(default)]
    pub three_point_reference: ReferenceKind,
}

impl Default for ProxOverrides {
    fn default() -> Self {
        Self {
            schedule: ScheduleKind::Weak,
            gamma: None,
            inner: InnerKind::CertifiedGradientDescent,
            inner_steps: default_inner_steps(),
            max_steps: default_max_steps(),
            tol_c1: None,
            tol_c2: None,
            delta: None,
            three_point_reference: ReferenceKind::None,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpDsvrgOverrides {
    pub p_const: Option<f64>,
    pub k_mult: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub p: Option<usize>,
    pub eta_step: Option<f64>,
    #[serde(default)]
    pub literal_divisor: bool,
    #[serde(default = "yes")]
    pub certify: bool,
}

impl Default for MpDsvrgOverrides {
    fn default() -> Self {
        Self {
            p_const: None,
            k_mult: None,
            k: None,
            p: None,
            eta_step: None,
            literal_divisor: false,
            certify: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpDaneOverrides {
    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[serde(rename = "R")]
    pub r: Option<usize>,
    pub kappa: Option<f64>,
    pub theta: Option<f64>,
    pub local_solver: Option<LocalSolver>,
    pub local_max_epochs: Option<usize>,
    pub saga_passes: Option<usize>,
    #[serde(default = "yes")]
    pub certify: bool,
}

impl Default for MpDaneOverrides {
    fn default() -> Self {
        Self {
            k: None,
            r: None,
            kappa: None,
            theta: None,
            local_solver: None,
            local_max_epochs: None,
            saga_passes: None,
            certify: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaOverride {
    pub gamma: Option<f64>,
}

fn default_epochs() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsvrgOverrides {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

impl Default for DsvrgOverrides {
    fn default() -> Self {
        Self { epochs: default_epochs() }
    }
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Series name in sweeps and plots; defaults to the algorithm name.
    pub label: Option<String>,
    pub algo: Algo,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub problem: ProblemConfig,
    pub budget: BudgetConfig,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub prox: ProxOverrides,
    #[serde(default)]
    pub mp_dsvrg: MpDsvrgOverrides,
    #[serde(default)]
    pub mp_dane: MpDaneOverrides,
    #[serde(default)]
    pub sgd: GammaOverride,
    #[serde(default)]
    pub dsvrg: DsvrgOverrides,
    #[serde(default)]
    pub emso: GammaOverride,
}

impl ExperimentConfig {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.algo.name().to_string())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        parse_config(&text)
    }

    /// Semantic checks serde cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "must list at least one seed"));
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(config_err("name", "use letters, digits, `-` and `_` only"));
        }
        if self.label().contains([',', '\n', '"']) {
            return Err(config_err("label", "must not contain commas, quotes or newlines"));
        }
        let p = &self.problem;
        match p.kind {
            ProblemKind::Synthetic => {
                match p.d {
                    None => return Err(config_err("problem.d", "required for kind = \"synthetic\"")),
                    Some(0) => return Err(config_err("problem.d", "must be positive")),
                    _ => {}
                }
                if p.law == LawKind::Coordinate && !(p.coordinate_ratio > 0.0) {
                    return Err(config_err("problem.coordinate_ratio", "must be positive"));
                }
            }
            ProblemKind::Dataset => {
                if p.path.is_none() {
                    return Err(config_err("problem.path", "required for kind = \"dataset\""));
                }
            }
        }
        if !(p.radius > 0.0) {
            return Err(config_err("problem.radius", "must be positive"));
        }
        if !(p.lambda >= 0.0) {
            return Err(config_err("problem.lambda", "must be non-negative"));
        }
        if !(p.beta > 0.0) {
            return Err(config_err("problem.beta", "must be positive"));
        }
        let budget = &self.budget;
        for (name, v) in [("budget.n_eps", budget.n_eps), ("budget.b", budget.b), ("budget.m", budget.m)] {
            if v == 0 {
                return Err(config_err(name, "must be positive"));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(config_err("sweep.values", "must not be empty"));
            }
            if sweep.values.contains(&0) {
                return Err(config_err("sweep.values", "values must be positive"));
            }
            if sweep.axis == SweepAxis::K && !matches!(self.algo, Algo::MpDsvrg | Algo::MpDane) {
                return Err(config_err("sweep.axis", "K applies to mp_dsvrg and mp_dane only"));
            }
            if sweep.axis == SweepAxis::M && self.algo.is_serial() {
                return Err(config_err("sweep.axis", "serial algorithms run on one machine"));
            }
        }
        if self.algo.is_serial() && budget.m != 1 {
            return Err(config_err("budget.m", format!("{} runs on one machine; set m = 1", self.algo.name())));
        }
        if self.algo == Algo::ExactProx && self.prox.schedule == ScheduleKind::Strong && !(p.lambda > 0.0) {
            return Err(config_err("prox.schedule", "the strongly convex schedule needs problem.lambda > 0"));
        }
        Ok(())
    }

    /// Adds `offset` to every seed.
    pub fn offset_seeds(&mut self, offset: u64) {
        for s in &mut self.seeds {
            *s = s.wrapping_add(offset);
        }
    }
}

/// Parses and validates a config, reporting the dotted path of the first
/// offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::new(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.into_inner().message().trim().to_string();
        CliError::Config {
            path: if path == "." { "<root>".into() } else { path },
            msg,
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// `PROXSIM_SEED_OFFSET`, or 0 when unset.
pub fn seed_offset_from_env() -> Result<u64> {
    match std::env::var("PROXSIM_SEED_OFFSET") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| config_err("PROXSIM_SEED_OFFSET", format!("`{v}` is not a non-negative integer"))),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(config_err("PROXSIM_SEED_OFFSET", e.to_string())),
    }
}
