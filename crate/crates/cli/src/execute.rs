//! Turns a validated config into concrete runs and executes them.

use proxsim_core::cluster::ClusterSim;
use proxsim_core::data::{DataFormat, DataSource, Dataset, DatasetSpec, FeatureLaw, SyntheticLSSpec};
use proxsim_core::dist::{
    dane_precondition, draw_shards, dsvrg_params, dsvrg_run, emso_run, mp_dane_params, mp_dane_run, mp_dsvrg_params_tuned,
    mp_dsvrg_run, run_minibatch_sgd, sgd_gamma, EmsoConfig, MinibatchSgdConfig, MpDsvrgTuning, ProblemBudget,
};
use proxsim_core::losses::{Domain, DomainKind, LossKind, LossModel};
use proxsim_core::metrics::RunReport;
use proxsim_core::prox::{run_minibatch_prox, InnerSolver, ThreePointReference, ProxRunConfig, ProxSchedule};
use rayon::prelude::*;

use crate::config::{
    Algo, ExperimentConfig, FormatKind, InnerKind, LawKind, ProblemKind, ReferenceKind, ScheduleKind, SweepAxis,
};
use crate::error::{config_err, CliError, Result};

/// Invariants whose violation makes the command exit non-zero.
pub const HARD_INVARIANTS: &[&str] = &["rounds", "ops_total", "ops_parallel", "peak_samples", "three_point"];

/// Problem instance shared by every run of one config.
#[derive(Debug, Clone)]
pub struct Instance {
    pub source: DataSource,
    pub model: LossModel,
    pub domain: Domain,
}

pub fn build_instance(cfg: &ExperimentConfig) -> Result<Instance> {
    let p = &cfg.problem;
    let ball = p.domain == DomainKind::Ball;
    let domain = Domain::new(p.domain, p.radius)?;
    match p.kind {
        ProblemKind::Synthetic => {
            let d = p.d.ok_or_else(|| config_err("problem.d", "required"))?;
            let law = match p.law {
                LawKind::Sphere => FeatureLaw::Sphere,
                LawKind::Coordinate => FeatureLaw::Coordinate {
                    weights: (0..d).map(|j| p.coordinate_ratio.powi(j as i32)).collect(),
                },
            };
            let spec = SyntheticLSSpec::new(SyntheticLSSpec::flat_w_star(d, p.w_star_norm), p.beta, p.sigma, p.data_seed, law)?;
            let model = spec.model(spec.iterate_bound(p.radius, ball), p.lambda)?;
            Ok(Instance {
                source: DataSource::Synthetic(spec),
                model,
                domain,
            })
        }
        ProblemKind::Dataset => {
            let path = p.path.clone().ok_or_else(|| config_err("problem.path", "required"))?;
            let format = match p.format.unwrap_or(FormatKind::Libsvm) {
                FormatKind::Libsvm => DataFormat::Libsvm,
                FormatKind::Csv => DataFormat::Csv { header: false },
                FormatKind::CsvHeader => DataFormat::Csv { header: true },
            };
            let data = Dataset::load(DatasetSpec {
                path,
                format,
                loss: p.loss.unwrap_or(LossKind::LeastSquares),
                split_seed: p.split_seed,
            })?;
            let bound = if ball { p.radius } else { p.radius + 1.0 };
            let model = data.model(bound, p.lambda)?;
            Ok(Instance {
                source: DataSource::Dataset(data),
                model,
                domain,
            })
        }
    }
}

/// One point of the (sweep value x seed) grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunPlan {
    pub axis_value: Option<u64>,
    pub seed: u64,
}

pub fn plan(cfg: &ExperimentConfig) -> Vec<RunPlan> {
    let values: Vec<Option<u64>> = match &cfg.sweep {
        Some(s) => s.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    values
        .into_iter()
        .flat_map(|axis_value| cfg.seeds.iter().map(move |&seed| RunPlan { axis_value, seed }))
        .collect()
}

/// Outcome of one run; failures are recorded and do not stop a suite.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config_index: usize,
    pub label: String,
    pub algo: Algo,
    pub axis: Option<SweepAxis>,
    pub plan: RunPlan,
    pub d: usize,
    pub n_eps: usize,
    pub b: usize,
    pub m: usize,
    pub outcome: std::result::Result<RunReport, String>,
}

impl RunRecord {
    pub fn report(&self) -> Option<&RunReport> {
        self.outcome.as_ref().ok()
    }

    pub fn hard_violations(&self) -> usize {
        self.report().map_or(0, |r| {
            r.violations().iter().filter(|v| HARD_INVARIANTS.contains(&v.name.as_str())).count()
        })
    }

    pub fn soft_violations(&self) -> usize {
        self.report().map_or(0, |r| r.violations().len()) - self.hard_violations()
    }

    /// Completed with no hard violation.
    pub fn healthy(&self) -> bool {
        self.outcome.is_ok() && self.hard_violations() == 0
    }
}

fn apply_axis(cfg: &ExperimentConfig, value: Option<u64>) -> ExperimentConfig {
    let mut c = cfg.clone();
    if let (Some(sweep), Some(v)) = (&cfg.sweep, value) {
        let v = v as usize;
        match sweep.axis {
            SweepAxis::B => c.budget.b = v,
            SweepAxis::NEps => c.budget.n_eps = v,
            SweepAxis::M => c.budget.m = v,
            SweepAxis::K => {
                c.mp_dsvrg.k = Some(v);
                c.mp_dane.k = Some(v);
            }
        }
    }
    c
}

fn outer_steps(n_eps: usize, b: usize, m: usize) -> usize {
    n_eps.div_ceil(b * m).max(1)
}

fn run_prox(cfg: &ExperimentConfig, inst: &Instance, seed: u64) -> Result<RunReport> {
    let b = cfg.budget.b;
    let t = outer_steps(cfg.budget.n_eps, b, 1);
    let o = &cfg.prox;
    let radius = cfg.problem.radius;
    let l = inst.model.lipschitz;
    let mut schedule = match o.schedule {
        ScheduleKind::Weak => ProxSchedule::weakly_convex(t, b, l, radius)?,
        ScheduleKind::Strong => ProxSchedule::strongly_convex(t, b, l, cfg.problem.lambda, radius)?,
    };
    if let Some(g) = o.gamma {
        schedule = schedule.with_gamma(g)?;
    }
    if o.tol_c1.is_some() || o.tol_c2.is_some() || o.delta.is_some() {
        let (c1, c2, delta) = (
            o.tol_c1.unwrap_or(schedule.tol_c1),
            o.tol_c2.unwrap_or(schedule.tol_c2),
            o.delta.unwrap_or(schedule.delta),
        );
        schedule = schedule.with_tolerance(c1, c2, delta)?;
    }
    let inner = match (cfg.algo, o.inner) {
        (Algo::ExactProx, _) => None,
        (_, InnerKind::Exact) => Some(InnerSolver::Exact),
        (_, InnerKind::GradientDescent) => Some(InnerSolver::GradientDescent { steps: o.inner_steps }),
        (_, InnerKind::CertifiedGradientDescent) => Some(InnerSolver::CertifiedGradientDescent { max_steps: o.max_steps }),
    };
    let three_point_reference = match o.three_point_reference {
        ReferenceKind::None => ThreePointReference::None,
        ReferenceKind::RandomInBall => ThreePointReference::RandomInBall,
        ReferenceKind::WStar => match inst.source.synthetic() {
            Some(spec) => ThreePointReference::Fixed(spec.w_star.clone()),
            None => return Err(config_err("prox.three_point_reference", "w_star needs a synthetic problem")),
        },
    };
    let run_cfg = ProxRunConfig {
        schedule,
        model: inst.model.clone(),
        domain: inst.domain,
        w0: vec![0.0; inst.source.dim()],
        inner,
        seed,
        three_point_reference,
        stride: None,
    };
    let mut report = run_minibatch_prox(&run_cfg, &inst.source)?;
    report.set_param("gamma", run_cfg.schedule.gamma_const);
    Ok(report)
}

fn run_distributed(cfg: &ExperimentConfig, inst: &Instance, seed: u64) -> Result<RunReport> {
    let (n_eps, b, m) = (cfg.budget.n_eps, cfg.budget.b, cfg.budget.m);
    let radius = cfg.problem.radius;
    let model = &inst.model;
    let mut cluster = ClusterSim::new(m, seed)?;
    let budget = ProblemBudget::from_model(n_eps, model, radius)?;
    let report = match cfg.algo {
        Algo::MpDsvrg => {
            let o = &cfg.mp_dsvrg;
            let defaults = MpDsvrgTuning::default();
            let tuning = MpDsvrgTuning {
                p_const: o.p_const.unwrap_or(defaults.p_const),
                k_mult: o.k_mult.unwrap_or(defaults.k_mult),
                eta_step: o.eta_step,
                literal_divisor: o.literal_divisor,
            };
            let mut c = mp_dsvrg_params_tuned(&budget, b, m, &tuning)?;
            if let Some(k) = o.k {
                c.k_inner = k;
            }
            if let Some(p) = o.p {
                c.p = p;
            }
            c.seed = seed;
            c.certify = o.certify;
            mp_dsvrg_run(&c, &inst.source, model, &inst.domain, &mut cluster)?
        }
        Algo::MpDane => {
            let o = &cfg.mp_dane;
            let mut c = mp_dane_params(&budget, b, m, inst.source.dim())?;
            if let Some(k) = o.k {
                c.k_inner = k;
            }
            if let Some(r) = o.r {
                c.r_outer = r;
            }
            if let Some(kappa) = o.kappa {
                c.kappa = kappa;
                c.alpha0 = c.q().sqrt();
                c.precondition_ok = dane_precondition(b, c.gamma, kappa, model.beta, inst.source.dim(), m);
            }
            if let Some(theta) = o.theta {
                c.theta = theta;
            }
            if let Some(s) = o.local_solver {
                c.local_solver = s;
            }
            if let Some(e) = o.local_max_epochs {
                c.local_max_epochs = e;
            }
            if let Some(p) = o.saga_passes {
                c.saga_passes = p;
            }
            c.seed = seed;
            c.certify = o.certify;
            mp_dane_run(&c, &inst.source, model, &inst.domain, &mut cluster)?
        }
        Algo::MinibatchSgd => {
            let t = outer_steps(n_eps, b, m);
            let gamma = match cfg.sgd.gamma {
                Some(g) => g,
                None => sgd_gamma(t, b * m, model.beta + model.lambda, model.lipschitz, radius)?,
            };
            let c = MinibatchSgdConfig {
                b,
                m,
                t_outer: t,
                gamma,
                seed,
            };
            run_minibatch_sgd(&c, &inst.source, model, &inst.domain, &mut cluster)?
        }
        Algo::Dsvrg => {
            let n = (n_eps / m) * m;
            let mut c = dsvrg_params(n, m, model, radius, cfg.dsvrg.epochs)?;
            c.seed = seed;
            let shards = draw_shards(&inst.source, &c, &mut cluster)?;
            dsvrg_run(&c, &shards, &inst.source, model, &inst.domain, &mut cluster)?
        }
        Algo::Emso => {
            let t = outer_steps(n_eps, b, m);
            let gamma = cfg
                .emso
                .gamma
                .unwrap_or_else(|| (8.0 * n_eps as f64).sqrt() * model.lipschitz / ((b * m) as f64 * radius));
            let c = EmsoConfig {
                b,
                m,
                t_outer: t,
                gamma,
                seed,
            };
            emso_run(&c, &inst.source, model, &inst.domain, &mut cluster)?
        }
        Algo::ExactProx | Algo::InexactProx => unreachable!("serial algorithms are dispatched to run_prox"),
    };
    Ok(report)
}

/// Executes one planned run. Errors inside the run are captured in the
/// record; only instance construction errors propagate.
pub fn execute(index: usize, cfg: &ExperimentConfig, inst: &Instance, plan: RunPlan) -> RunRecord {
    let c = apply_axis(cfg, plan.axis_value);
    let outcome = if c.algo.is_serial() {
        run_prox(&c, inst, plan.seed)
    } else {
        run_distributed(&c, inst, plan.seed)
    };
    RunRecord {
        config_index: index,
        label: cfg.label(),
        algo: cfg.algo,
        axis: cfg.sweep.as_ref().map(|s| s.axis),
        plan,
        d: inst.source.dim(),
        n_eps: c.budget.n_eps,
        b: c.budget.b,
        m: c.budget.m,
        outcome: outcome.map_err(|e: CliError| e.to_string()),
    }
}

/// Runs every (config, sweep value, seed) triple on at most `jobs` threads.
/// Records come back in config, sweep and seed order.
pub fn run_all(configs: &[ExperimentConfig], jobs: usize) -> Result<Vec<RunRecord>> {
    let instances: Vec<Instance> = configs.iter().map(build_instance).collect::<Result<_>>()?;
    let tasks: Vec<(usize, RunPlan)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| plan(c).into_iter().map(move |p| (i, p)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| config_err("--jobs", e.to_string()))?;
    Ok(pool.install(|| {
        tasks
            .par_iter()
            .map(|&(i, p)| execute(i, &configs[i], &instances[i], p))
            .collect()
    }))
}
