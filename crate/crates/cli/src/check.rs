//! `proxsim check`: a quick battery of invariants on small instances.

use proxsim_core::cluster::ClusterSim;
use proxsim_core::data::{DataSource, SyntheticLSSpec};
use proxsim_core::dist::{
    catalyst_alpha_next, catalyst_extrapolate, emso_run, mp_dane_params, mp_dane_run, mp_dsvrg_params_tuned, mp_dsvrg_run,
    DaneRegime, EmsoConfig, LocalSolver, MpDaneConfig, MpDsvrgTuning, ProblemBudget,
};
use proxsim_core::losses::{Domain, LossModel};
use proxsim_core::metrics::RunReport;
use proxsim_core::prox::{run_minibatch_prox, ThreePointReference, ProxRunConfig, ProxSchedule};

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

const RADIUS: f64 = 2.0;

fn instance(d: usize, seed: u64) -> Result<(DataSource, LossModel, Domain)> {
    let spec = SyntheticLSSpec::sphere(SyntheticLSSpec::flat_w_star(d, 1.0), 1.0, 0.1, seed)?;
    let model = spec.model(spec.iterate_bound(RADIUS, false), 0.0)?;
    Ok((DataSource::Synthetic(spec), model, Domain::unconstrained(RADIUS)?))
}

fn exact_prox(source: &DataSource, model: &LossModel, domain: &Domain, b: usize, t: usize, seed: u64) -> Result<(ProxSchedule, RunReport)> {
    let schedule = ProxSchedule::weakly_convex(t, b, model.lipschitz, RADIUS)?;
    let cfg = ProxRunConfig {
        schedule: schedule.clone(),
        model: model.clone(),
        domain: *domain,
        w0: vec![0.0; source.dim()],
        inner: None,
        seed,
        three_point_reference: ThreePointReference::RandomInBall,
        stride: Some(1),
    };
    Ok((schedule, run_minibatch_prox(&cfg, source)?))
}

fn named_violations(report: &RunReport, name: &str) -> (usize, usize) {
    let all = report.invariants_named(name).count();
    let bad = report.invariants_named(name).filter(|r| !r.passed).count();
    (all, bad)
}

fn three_point() -> Result<(bool, String)> {
    let (source, model, domain) = instance(8, 11)?;
    let (_, report) = exact_prox(&source, &model, &domain, 16, 50, 3)?;
    let (all, bad) = named_violations(&report, "three_point");
    Ok((all > 0 && bad == 0, format!("{all} steps checked, {bad} violations")))
}

fn dane_reduces_to_exact_prox() -> Result<(bool, String)> {
    let (source, model, domain) = instance(6, 2)?;
    let (b, t, seed) = (16, 30, 5);
    let (schedule, exact) = exact_prox(&source, &model, &domain, b, t, seed)?;
    let cfg = MpDaneConfig {
        b,
        m: 1,
        t_outer: t,
        gamma: schedule.gamma_const,
        kappa: 0.0,
        r_outer: 1,
        k_inner: 1,
        theta: 0.0,
        local_solver: LocalSolver::ExactLs,
        alpha0: 1.0,
        seed,
        regime: DaneRegime::SmallBatch,
        b_star: f64::INFINITY,
        precondition_ok: true,
        padding: 0,
        radius: RADIUS,
        certify: false,
        local_max_epochs: 1,
        saga_passes: 1,
        notes: vec![],
    };
    let dane = mp_dane_run(&cfg, &source, &model, &domain, &mut ClusterSim::new(1, seed)?)?;
    let emso_cfg = EmsoConfig {
        b,
        m: 1,
        t_outer: t,
        gamma: schedule.gamma_const,
        seed,
    };
    let emso = emso_run(&emso_cfg, &source, &model, &domain, &mut ClusterSim::new(1, seed)?)?;
    let ok_dane = dane.w_hat == exact.w_hat;
    let ok_emso = emso.w_hat == exact.w_hat;
    Ok((ok_dane && ok_emso, format!("m=1 MP-DANE identical: {ok_dane}, m=1 EMSO identical: {ok_emso}")))
}

fn resources() -> Result<(bool, String)> {
    let (source, model, domain) = instance(10, 1)?;
    let (b, m) = (64, 4);
    let budget = ProblemBudget::from_model(b * m * 8, &model, RADIUS)?;
    let mut cfg = mp_dsvrg_params_tuned(&budget, b, m, &MpDsvrgTuning::calibrated())?;
    cfg.certify = false;
    let report = mp_dsvrg_run(&cfg, &source, &model, &domain, &mut ClusterSim::new(m, 3)?)?;
    let ledger = report.ledger.clone().unwrap_or_default();
    let (k, t, bb, p) = (cfg.k_inner as u64, cfg.t_outer as u64, b as u64, cfg.p as u64);
    let ok = ledger.rounds == 2 * k * t
        && ledger.ops_total() == k * t * (bb * m as u64 + bb / p)
        && ledger.ops_parallel() == k * t * (bb + bb / p)
        && ledger.max_peak_samples() == b;
    Ok((
        ok,
        format!(
            "MP-DSVRG K={k} T={t} p={p}: rounds {} ops_parallel {} peak {}",
            ledger.rounds,
            ledger.ops_parallel(),
            ledger.max_peak_samples()
        ),
    ))
}

fn catalyst() -> Result<(bool, String)> {
    let q: f64 = 0.04;
    let a = catalyst_alpha_next(0.5, q);
    let residual = (a * a - (1.0 - a) * 0.25 - q * a).abs();
    let fixed = (catalyst_alpha_next(0.3, 0.09) - 0.3).abs();
    let y = catalyst_extrapolate(&[3.0], &[3.0], 0.4, 0.5)?;
    let ok = residual < 1e-15 && fixed < 1e-15 && y == vec![3.0];
    Ok((ok, format!("alpha residual {residual:.1e}, fixed-point error {fixed:.1e}")))
}

fn dane_contraction() -> Result<(bool, String)> {
    let (source, model, domain) = instance(5, 8)?;
    let (b, m) = (64, 4);
    let budget = ProblemBudget::from_model(b * m * 4, &model, RADIUS)?;
    let mut cfg = mp_dane_params(&budget, b, m, source.dim())?;
    cfg.seed = 2;
    cfg.certify = true;
    let report = mp_dane_run(&cfg, &source, &model, &domain, &mut ClusterSim::new(m, 2)?)?;
    let (all, bad) = named_violations(&report, "dane_contraction");
    Ok((all > 0 && bad == 0, format!("{all} contractions checked, {bad} violations")))
}

fn mp_dsvrg_inner_gap() -> Result<(bool, String)> {
    let (source, model, domain) = instance(10, 4)?;
    let (b, m) = (64, 4);
    let budget = ProblemBudget::from_model(b * m * 8, &model, RADIUS)?;
    let mut cfg = mp_dsvrg_params_tuned(&budget, b, m, &MpDsvrgTuning::calibrated())?;
    cfg.certify = true;
    let report = mp_dsvrg_run(&cfg, &source, &model, &domain, &mut ClusterSim::new(m, 6)?)?;
    let (all, bad) = named_violations(&report, "inner_gap");
    Ok((all > 0 && bad == 0, format!("{all} subproblems checked, {bad} violations")))
}

type Check = (&'static str, fn() -> Result<(bool, String)>);

const CHECKS: &[Check] = &[
    ("three_point", three_point),
    ("single_machine_reductions", dane_reduces_to_exact_prox),
    ("resource_identities", resources),
    ("catalyst_sequence", catalyst),
    ("dane_contraction", dane_contraction),
    ("mp_dsvrg_inner_gap", mp_dsvrg_inner_gap),
];

/// Runs every check; an error inside a check counts as a failure.
pub fn run_checks() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, f)| match f() {
            Ok((passed, detail)) => CheckOutcome { name, passed, detail },
            Err(e) => CheckOutcome {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}
