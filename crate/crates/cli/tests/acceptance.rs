//! End-to-end acceptance suite. Every criterion prints one `PASS` or `FAIL`
//! line; the test fails if any criterion fails.
//!
//! Reference values come from oracles written here against the public API:
//! closed-form population objectives, minimizers from a Gaussian
//! elimination, and a serial SVRG written out by hand.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::test_runner::{Config as PropConfig, TestRunner};
use proxsim_cli::config::ExperimentConfig;
use proxsim_cli::execute::{build_instance, run_all, RunRecord};
use proxsim_cli::output::RUNS_HEADER;
use proxsim_cli::suites::load_suite;
use proxsim_core::cluster::ClusterSim;
use proxsim_core::data::{draw_minibatch, rng_from_seed, DataSource, FeatureLaw, SimRng, SyntheticLSSpec};
use proxsim_core::dist::dane::LocalSolve;
use proxsim_core::dist::{
    catalyst_alpha_next, catalyst_coefficient, dane_inner_step, draw_shards, dsvrg_params, dsvrg_run, mp_dane_params,
    mp_dane_run, mp_dsvrg_params_tuned, mp_dsvrg_run, DaneRegime, LocalSolver, MpDaneConfig, MpDsvrgConfig, MpDsvrgTuning,
    ProblemBudget,
};
use proxsim_core::losses::{Domain, LossModel, Minibatch, Sample};
use proxsim_core::metrics::{fit_rate_slope, RunReport};
use proxsim_core::prox::{
    exact_prox_step, run_minibatch_prox, InnerSolver, ThreePointReference, ProxRunConfig, ProxRunState, ProxSchedule,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

// ---------------------------------------------------------------------------
// Oracles

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Solves `a x = rhs` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Vec<f64> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (rhs[row] - s) / a[row][row];
    }
    x
}

/// Hessian and linear term of `mean 0.5 (<w, x> - y)^2 + (mu / 2) ||w - c||^2`:
/// the minimizer solves `H w = r`.
fn ls_normal_equations(samples: &[&Sample], mu: f64, center: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = center.len();
    let n = samples.len() as f64;
    let mut h = vec![vec![0.0; d]; d];
    let mut r: Vec<f64> = center.iter().map(|c| mu * c).collect();
    for s in samples {
        for i in 0..d {
            r[i] += s.x[i] * s.y / n;
            for j in 0..d {
                h[i][j] += s.x[i] * s.x[j] / n;
            }
        }
    }
    for (i, row) in h.iter_mut().enumerate() {
        row[i] += mu;
    }
    (h, r)
}

/// `0.5 (w - w_opt)^T H (w - w_opt)`, the exact gap of a quadratic.
fn quadratic_gap(h: &[Vec<f64>], w: &[f64], w_opt: &[f64]) -> f64 {
    let e: Vec<f64> = w.iter().zip(w_opt).map(|(a, b)| a - b).collect();
    let he: Vec<f64> = h.iter().map(|row| dot(row, &e)).collect();
    0.5 * dot(&e, &he)
}

fn empirical(samples: &[Sample], lambda: f64, w: &[f64]) -> f64 {
    let data: f64 = samples.iter().map(|s| 0.5 * (dot(w, &s.x) - s.y).powi(2)).sum::<f64>() / samples.len() as f64;
    data + 0.5 * lambda * dot(w, w)
}

/// Second moment of the feature law, derived from its definition.
fn covariance(spec: &SyntheticLSSpec) -> Vec<f64> {
    match &spec.law {
        FeatureLaw::Sphere => vec![spec.beta / spec.d as f64; spec.d],
        FeatureLaw::Coordinate { weights } => {
            let total: f64 = weights.iter().sum();
            weights.iter().map(|w| spec.beta * w / total).collect()
        }
    }
}

/// Population objective with ridge `lambda`; the label noise is uniform on
/// `[-sigma, sigma]` and contributes `sigma^2 / 6`.
fn population(spec: &SyntheticLSSpec, lambda: f64, w: &[f64]) -> f64 {
    let cov = covariance(spec);
    let quad: f64 = (0..spec.d).map(|j| cov[j] * (w[j] - spec.w_star[j]).powi(2)).sum();
    0.5 * quad + spec.sigma * spec.sigma / 6.0 + 0.5 * lambda * dot(w, w)
}

/// `population(w) - min population`, with the minimizer from the normal
/// equations of the diagonal quadratic.
fn population_subopt(spec: &SyntheticLSSpec, lambda: f64, w: &[f64]) -> f64 {
    let cov = covariance(spec);
    let w_opt: Vec<f64> = (0..spec.d).map(|j| cov[j] * spec.w_star[j] / (cov[j] + lambda)).collect();
    population(spec, lambda, w) - population(spec, lambda, &w_opt)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares slope of `ln y` on `ln x`.
fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn random_in_ball(rng: &mut SimRng, d: usize, radius: f64) -> Vec<f64> {
    let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64) / dot(&g, &g).sqrt();
    g.into_iter().map(|v| v * r).collect()
}

fn sphere_instance(d: usize, radius: f64, ball: bool, lambda: f64, seed: u64) -> (SyntheticLSSpec, LossModel) {
    let spec = SyntheticLSSpec::sphere(SyntheticLSSpec::flat_w_star(d, 1.0), 1.0, 0.1, seed).unwrap();
    let model = spec.model(spec.iterate_bound(radius, ball), lambda).unwrap();
    (spec, model)
}

/// Final suboptimality recomputed from `w_hat`, grouped by config label
/// and sweep value.
fn oracle_means(configs: &[ExperimentConfig], records: &[RunRecord]) -> BTreeMap<String, Vec<(f64, f64)>> {
    let specs: Vec<(SyntheticLSSpec, f64)> = configs
        .iter()
        .map(|c| {
            let inst = build_instance(c).unwrap();
            (inst.source.synthetic().unwrap().clone(), c.problem.lambda)
        })
        .collect();
    let mut grouped: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for r in records {
        let rep = r.report().unwrap_or_else(|| panic!("{} failed: {:?}", r.label, r.outcome));
        let (spec, lambda) = &specs[r.config_index];
        grouped
            .entry((r.label.clone(), r.plan.axis_value.unwrap()))
            .or_default()
            .push(population_subopt(spec, *lambda, &rep.w_hat));
    }
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for ((label, v), xs) in grouped {
        out.entry(label).or_default().push((v as f64, mean_se(&xs).0));
    }
    out
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

// ---------------------------------------------------------------------------
// Criteria

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

/// Three-point residual in the form multiplied through by `gamma`, which also
/// covers the `gamma = 0` first step of the ramp.
fn three_point_residual(
    w_prev: &[f64],
    w_t: &[f64],
    u: &[f64],
    batch: &[Sample],
    gamma: f64,
    lambda: f64,
) -> (f64, f64) {
    let f_t = empirical(batch, lambda, w_t);
    let f_u = empirical(batch, lambda, u);
    let terms = [
        (lambda + gamma) * dist_sq(w_t, u),
        gamma * dist_sq(w_prev, u),
        gamma * dist_sq(w_prev, w_t),
        2.0 * f_t.abs(),
        2.0 * f_u.abs(),
    ];
    let residual = terms[1] - terms[2] - 2.0 * (f_t - f_u) - terms[0];
    let scale = terms.iter().fold(1.0_f64, |a, b| a.max(*b));
    (residual, scale)
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let (d, b, steps, radius) = (20, 16, 1000, 2.0);
    let mut worst = f64::INFINITY;
    let mut checked = 0;
    let mut library_violations = 0;
    for (strong, lambda) in [(false, 0.0), (true, 0.5)] {
        let (spec, model) = sphere_instance(d, radius, false, lambda, 21);
        let source = DataSource::Synthetic(spec);
        let sched = if strong {
            ProxSchedule::strongly_convex(steps, b, model.lipschitz, lambda, radius).unwrap()
        } else {
            ProxSchedule::weakly_convex(steps, b, model.lipschitz, radius).unwrap()
        };
        let domain = Domain::unconstrained(radius).unwrap();
        let mut state = ProxRunState::new(vec![0.0; d]);
        let mut rng = rng_from_seed(4);
        let mut ref_rng = rng_from_seed(5);
        for t in 1..=steps {
            let batch = draw_minibatch(&source, b, &mut rng).unwrap();
            let w_prev = state.w.clone();
            exact_prox_step(&mut state, &sched, &batch, &model, &domain).unwrap();
            let u = random_in_ball(&mut ref_rng, d, radius);
            let gamma = sched.gamma_at(t).unwrap();
            let (res, scale) = three_point_residual(&w_prev, &state.w, &u, batch.samples(), gamma, lambda);
            worst = worst.min(res / scale);
            checked += 1;
        }
        let run = ProxRunConfig {
            schedule: sched,
            model,
            domain,
            w0: vec![0.0; d],
            inner: None,
            seed: 9,
            three_point_reference: ThreePointReference::RandomInBall,
            stride: None,
        };
        let report = run_minibatch_prox(&run, &source).unwrap();
        library_violations += report.invariants_named("three_point").filter(|r| !r.passed).count();
    }
    let elapsed = start.elapsed();
    verdict(
        worst >= -1e-7 && library_violations == 0 && within(elapsed, 10),
        format!(
            "{checked} steps, min residual/scale {worst:.2e}, in-run violations {library_violations}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let (d, b, n, radius) = (20, 16, 4096, 2.0);
    let (spec, model) = sphere_instance(d, radius, true, 0.0, 3);
    let source = DataSource::Synthetic(spec.clone());
    let t = n / b;
    let subopts: Vec<f64> = (0..20)
        .map(|seed| {
            let cfg = ProxRunConfig {
                schedule: ProxSchedule::weakly_convex(t, b, model.lipschitz, radius).unwrap(),
                model: model.clone(),
                domain: Domain::ball(radius).unwrap(),
                w0: vec![0.0; d],
                inner: None,
                seed,
                three_point_reference: ThreePointReference::None,
                stride: None,
            };
            population_subopt(&spec, 0.0, &run_minibatch_prox(&cfg, &source).unwrap().w_hat)
        })
        .collect();
    let (mean, se) = mean_se(&subopts);
    let bound = 8f64.sqrt() * model.lipschitz * radius / (n as f64).sqrt();
    let elapsed = start.elapsed();
    verdict(
        mean + 2.0 * se <= bound && within(elapsed, 120),
        format!("mean + 2SE = {:.3e} vs bound {bound:.3e}, {:.1}s", mean + 2.0 * se, elapsed.as_secs_f64()),
    )
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let suite = load_suite("rates", dir.path(), dir.path()).unwrap();
    let records = run_all(&suite.configs, jobs()).unwrap();
    let means = oracle_means(&suite.configs, &records);
    let weak = loglog_slope(&means["weak"]);
    let strong = loglog_slope(&means["strong"]);
    let library: Vec<f64> = proxsim_cli::output::sweeps(&records).iter().map(|s| fit_rate_slope(s).unwrap().0).collect();
    let agree = (library[0] - weak).abs() < 1e-6 && (library[1] - strong).abs() < 1e-6;
    let elapsed = start.elapsed();
    verdict(
        (weak + 0.5).abs() <= 0.12 && (strong + 1.0).abs() <= 0.2 && agree && within(elapsed, 300),
        format!(
            "weak slope {weak:.3}, strong slope {strong:.3}, pipeline fit agrees: {agree}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let suite = load_suite("anyb", dir.path(), dir.path()).unwrap();
    let records = run_all(&suite.configs, jobs()).unwrap();
    let means = oracle_means(&suite.configs, &records);
    let prox: Vec<f64> = means["exact_prox"].iter().map(|p| p.1).collect();
    let ratio = prox.iter().cloned().fold(f64::MIN, f64::max) / prox.iter().cloned().fold(f64::MAX, f64::min);
    let sgd = &means["minibatch_sgd"];
    let at = |b: f64| sgd.iter().find(|p| p.0 == b).unwrap().1;
    let growth = at(512.0) / at(1.0);
    let elapsed = start.elapsed();
    verdict(
        ratio <= 2.0 && growth >= 2.0 && within(elapsed, 300),
        format!(
            "exact_prox max/min {ratio:.3}, minibatch_sgd b=512/b=1 {growth:.3}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let (d, gamma, trials) = (10, 1.0, 2000);
    let (spec, model) = sphere_instance(d, 2.0, false, 0.0, 12);
    let source = DataSource::Synthetic(spec.clone());
    let w_prev = vec![0.0; d];
    let mut cv_points = Vec::new();
    let mut bound_ok = false;
    let mut detail = String::new();
    for (k, b) in [16usize, 64, 256].into_iter().enumerate() {
        let mut rng = rng_from_seed(100 + k as u64);
        let mut gaps = Vec::with_capacity(trials);
        let mut cv = Vec::with_capacity(trials);
        for _ in 0..trials {
            let batch = draw_minibatch(&source, b, &mut rng).unwrap();
            let refs: Vec<&Sample> = batch.samples().iter().collect();
            let (h, r) = ls_normal_equations(&refs, gamma, &w_prev);
            let w = solve(h, r);
            let gap = population(&spec, 0.0, &w) - empirical(batch.samples(), 0.0, &w);
            let control = population(&spec, 0.0, &w_prev) - empirical(batch.samples(), 0.0, &w_prev);
            gaps.push(gap);
            cv.push(gap - control);
        }
        let (mean, se) = mean_se(&gaps);
        let (cv_mean, _) = mean_se(&cv);
        if b == 16 {
            let bound = 4.0 * model.lipschitz.powi(2) / (gamma * b as f64);
            bound_ok = mean.abs() <= bound + 3.0 * se;
            let lib = proxsim_core::metrics::stability_bound_check(&spec, &model, &w_prev, gamma, b, trials, 7).unwrap();
            bound_ok &= lib.mean.abs() <= lib.bound + 3.0 * lib.se && (lib.bound - bound).abs() <= 1e-12 * bound;
            detail = format!("b=16 |mean| {:.3e} vs bound {bound:.3e} + 3SE", mean.abs());
        }
        cv_points.push((b as f64, cv_mean.abs()));
    }
    let slope = loglog_slope(&cv_points);
    let elapsed = start.elapsed();
    verdict(
        bound_ok && (slope + 1.0).abs() <= 0.3 && within(elapsed, 120),
        format!("{detail}, |gap| slope in b {slope:.3}, {:.1}s", elapsed.as_secs_f64()),
    )
}

/// Inner tolerance at step `t` of the constant schedule on `b m` samples.
fn eta_t(t: usize, t_outer: usize, bm: usize, lipschitz: f64, d0: f64) -> f64 {
    let ratio = t_outer as f64 / bm as f64;
    let c = 1e-4;
    (c * ratio.sqrt()).min(c * ratio.powf(1.5)) * lipschitz * d0 / (t as f64).powi(3)
}

fn inner_gap_audit(report: &RunReport, t_outer: usize, bm: usize, lipschitz: f64, d0: f64) -> (usize, usize, f64) {
    let records: Vec<_> = report.invariants_named("inner_gap").collect();
    let mut bad = 0;
    let mut worst: f64 = 0.0;
    for r in &records {
        let eta = eta_t(r.t, t_outer, bm, lipschitz, d0);
        if (r.bound - eta).abs() > 1e-12 * eta || r.value > eta {
            bad += 1;
        }
        worst = worst.max(r.value / eta);
    }
    (records.len(), bad, worst)
}

struct Table1Instance {
    source: DataSource,
    model: LossModel,
    domain: Domain,
    budget: ProblemBudget,
}

fn table1_instance() -> Table1Instance {
    let (spec, model) = sphere_instance(10, 2.0, false, 0.0, 1);
    let budget = ProblemBudget::from_model(64 * 4 * 32, &model, 2.0).unwrap();
    Table1Instance {
        source: DataSource::Synthetic(spec),
        domain: Domain::unconstrained(2.0).unwrap(),
        model,
        budget,
    }
}

fn criterion_6() -> Verdict {
    let inst = table1_instance();
    let (b, m, t_outer) = (64, 4, 32);
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..2u64 {
        let mut dsvrg = mp_dsvrg_params_tuned(&inst.budget, b, m, &MpDsvrgTuning::calibrated()).unwrap();
        dsvrg.seed = seed;
        dsvrg.certify = true;
        let rep = mp_dsvrg_run(&dsvrg, &inst.source, &inst.model, &inst.domain, &mut ClusterSim::new(m, seed).unwrap()).unwrap();
        let (n, bad, worst) = inner_gap_audit(&rep, t_outer, b * m, inst.model.lipschitz, 2.0);
        ok &= dsvrg.t_outer == t_outer && n == t_outer && bad == 0;
        lines.push(format!("MP-DSVRG(K={}) {n} steps {bad} over, max gap/eta {worst:.2e}", dsvrg.k_inner));

        let mut dane = mp_dane_params(&inst.budget, b, m, 10).unwrap();
        dane.seed = seed;
        dane.certify = true;
        let rep = mp_dane_run(&dane, &inst.source, &inst.model, &inst.domain, &mut ClusterSim::new(m, seed).unwrap()).unwrap();
        let (n, bad, worst) = inner_gap_audit(&rep, t_outer, b * m, inst.model.lipschitz, 2.0);
        ok &= dane.t_outer == t_outer && n == t_outer && bad == 0;
        lines.push(format!("MP-DANE(K={}) {n} steps {bad} over, max gap/eta {worst:.2e}", dane.k_inner));
    }
    verdict(ok, lines.join("; "))
}

fn criterion_7() -> Verdict {
    let inst = table1_instance();
    let (b, m) = (64u64, 4u64);
    let mut failures = Vec::new();

    let mut cfg = mp_dsvrg_params_tuned(&inst.budget, b as usize, m as usize, &MpDsvrgTuning::calibrated()).unwrap();
    cfg.certify = false;
    let rep = mp_dsvrg_run(&cfg, &inst.source, &inst.model, &inst.domain, &mut ClusterSim::new(4, 0).unwrap()).unwrap();
    let l = rep.ledger.unwrap();
    let (k, t, p) = (cfg.k_inner as u64, cfg.t_outer as u64, cfg.p as u64);
    if l.rounds != 2 * k * t {
        failures.push(format!("MP-DSVRG rounds {} != {}", l.rounds, 2 * k * t));
    }
    if l.peak_samples != vec![b as usize; 4] {
        failures.push(format!("MP-DSVRG peak {:?}", l.peak_samples));
    }
    if l.ops_parallel() != k * t * (b + b / p) {
        failures.push(format!("MP-DSVRG ops {} != {}", l.ops_parallel(), k * t * (b + b / p)));
    }
    let dsvrg_line = format!("MP-DSVRG rounds {} ops {}", l.rounds, l.ops_parallel());

    let mut cfg = mp_dane_params(&inst.budget, b as usize, m as usize, 10).unwrap();
    cfg.certify = false;
    cfg.t_outer = 4;
    let rep = mp_dane_run(&cfg, &inst.source, &inst.model, &inst.domain, &mut ClusterSim::new(4, 0).unwrap()).unwrap();
    let l = rep.ledger.unwrap();
    let want = 2 * (cfg.k_inner * cfg.r_outer * cfg.t_outer) as u64;
    if l.rounds != want {
        failures.push(format!("MP-DANE rounds {} != {want}", l.rounds));
    }

    let mut cfg = dsvrg_params(4096, 4, &inst.model, 2.0, 8).unwrap();
    cfg.seed = 1;
    let mut cluster = ClusterSim::new(4, 1).unwrap();
    let shards = draw_shards(&inst.source, &cfg, &mut cluster).unwrap();
    let rep = dsvrg_run(&cfg, &shards, &inst.source, &inst.model, &inst.domain, &mut cluster).unwrap();
    let l = rep.ledger.unwrap();
    if l.rounds != 16 || l.max_peak_samples() != 1024 {
        failures.push(format!("DSVRG rounds {} peak {}", l.rounds, l.max_peak_samples()));
    }
    let ok = failures.is_empty();
    verdict(ok, if ok { format!("{dsvrg_line}, MP-DANE rounds {want}, DSVRG rounds 16 peak 1024") } else { failures.join("; ") })
}

fn criterion_8() -> Verdict {
    let (d, m, b, gamma, kappa) = (5usize, 4usize, 64usize, 4.0, 0.0);
    let beta = 1.0;
    let precondition = b as f64 * (gamma + kappa) * (gamma + kappa) >= 256.0 * beta * beta * ((d * m) as f64).ln();
    let agrees = precondition == proxsim_core::dist::dane_precondition(b, gamma, kappa, beta, d, m);
    let local = LocalSolve {
        solver: LocalSolver::ProxSvrg,
        theta: 1.0 / 6.0,
        max_epochs: 200,
        saga_passes: 1,
    };
    let (mut steps, mut over, mut worst) = (0, 0, 0.0f64);
    for seed in 0..10u64 {
        let (spec, model) = sphere_instance(d, 2.0, false, 0.0, 40 + seed);
        let source = DataSource::Synthetic(spec);
        let mut rng = rng_from_seed(seed);
        let locals: Vec<Minibatch> = (0..m).map(|_| draw_minibatch(&source, b, &mut rng).unwrap()).collect();
        let center = random_in_ball(&mut rng, d, 1.0);
        let all: Vec<&Sample> = locals.iter().flat_map(|l| l.samples()).collect();
        let (h, r) = ls_normal_equations(&all, gamma, &center);
        let x_star = solve(h, r);
        let mut cluster = ClusterSim::new(m, seed).unwrap();
        let domain = Domain::unconstrained(2.0).unwrap();
        let mut z = vec![0.0; d];
        for _ in 0..6 {
            let out = dane_inner_step(&mut cluster, &z, &locals, &model, gamma, kappa, &center, &center, &local, &domain).unwrap();
            let ratio = dist_sq(&out.z, &x_star).sqrt() / dist_sq(&z, &x_star).sqrt();
            worst = worst.max(ratio);
            steps += 1;
            if ratio > 0.75 {
                over += 1;
            }
            z = out.z;
        }
    }
    verdict(
        precondition && agrees && over == 0,
        format!("precondition {precondition}, {steps} steps over 10 seeds, {over} above 0.75, worst ratio {worst:.3}"),
    )
}

/// Minibatch-prox whose subproblems get one SVRG pass over the batch,
/// averaging the `b + 1` inner iterates. Floating-point operations follow
/// the same order as the library so that results compare bit for bit.
fn serial_svrg_prox(source: &DataSource, model: &LossModel, b: usize, t_outer: usize, gamma: f64, eta: f64, seed: u64) -> Vec<f64> {
    let d = source.dim();
    let mut rng = rng_from_seed(seed);
    let mut w = vec![0.0; d];
    let mut sum_w = vec![0.0; d];
    let mut total = 0.0;
    for _ in 0..t_outer {
        let batch = draw_minibatch(source, b, &mut rng).unwrap();
        let mut g = vec![0.0; d];
        for s in batch.samples() {
            let r = dot(&w, &s.x) - s.y;
            for j in 0..d {
                g[j] += r * s.x[j];
            }
        }
        let inv = 1.0 / b as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        let mut order: Vec<usize> = (0..b).collect();
        order.shuffle(&mut rng);
        let mut x = w.clone();
        let mut acc = x.clone();
        for &i in &order {
            let s = &batch.samples()[i];
            let gx = model.grad(&x, s).unwrap();
            let gz = model.grad(&w, s).unwrap();
            for j in 0..d {
                x[j] -= eta * ((gx[j] - gz[j]) + g[j] + gamma * (x[j] - w[j]));
                acc[j] += x[j];
            }
        }
        w = acc.iter().map(|v| v / (b + 1) as f64).collect();
        let weight = 1.0 / t_outer as f64;
        for j in 0..d {
            sum_w[j] += weight * w[j];
        }
        total += weight;
    }
    sum_w.iter().map(|v| v / total).collect()
}

fn criterion_9() -> Verdict {
    let (spec, model) = sphere_instance(6, 2.0, false, 0.0, 2);
    let source = DataSource::Synthetic(spec);
    let domain = Domain::unconstrained(2.0).unwrap();
    let (b, t) = (16, 40);
    let schedule = ProxSchedule::weakly_convex(t, b, model.lipschitz, 2.0).unwrap();
    let (mut dane_eq, mut inexact_eq, mut svrg_eq) = (true, true, true);
    for seed in [0u64, 7, 31] {
        let prox = |inner: Option<InnerSolver>, schedule: ProxSchedule| {
            let cfg = ProxRunConfig {
                schedule,
                model: model.clone(),
                domain,
                w0: vec![0.0; 6],
                inner,
                seed,
                three_point_reference: ThreePointReference::None,
                stride: Some(1),
            };
            run_minibatch_prox(&cfg, &source).unwrap()
        };
        let exact = prox(None, schedule.clone());
        let zero_budget = prox(Some(InnerSolver::Exact), schedule.clone().with_tolerance(0.0, 0.0, 0.5).unwrap());
        inexact_eq &= zero_budget.w_hat == exact.w_hat && zero_budget.trajectory == exact.trajectory;

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
            radius: 2.0,
            certify: false,
            local_max_epochs: 1,
            saga_passes: 1,
            notes: vec![],
        };
        let dane = mp_dane_run(&cfg, &source, &model, &domain, &mut ClusterSim::new(1, seed).unwrap()).unwrap();
        dane_eq &= dane.w_hat == exact.w_hat && dane.trajectory == exact.trajectory;

        let cfg = MpDsvrgConfig {
            b: 12,
            m: 1,
            t_outer: 25,
            gamma: 1.7,
            k_inner: 1,
            p: 1,
            eta_step: 0.08,
            seed,
            literal_divisor: false,
            padding: 0,
            radius: 2.0,
            certify: false,
            notes: vec![],
        };
        let rep = mp_dsvrg_run(&cfg, &source, &model, &domain, &mut ClusterSim::new(1, seed).unwrap()).unwrap();
        svrg_eq &= rep.w_hat == serial_svrg_prox(&source, &model, 12, 25, 1.7, 0.08, seed);
    }
    verdict(
        dane_eq && svrg_eq && inexact_eq,
        format!("MP-DANE m=1 == exact prox: {dane_eq}; MP-DSVRG m=1 == serial SVRG: {svrg_eq}; zero-budget inexact == exact: {inexact_eq}"),
    )
}

fn criterion_10() -> Verdict {
    let (spec, model) = sphere_instance(10, 2.0, false, 0.0, 6);
    let source = DataSource::Synthetic(spec);
    let domain = Domain::unconstrained(2.0).unwrap();
    let epochs = 8;
    let mut cfg = dsvrg_params(4096, 4, &model, 2.0, epochs).unwrap();
    cfg.seed = 2;
    let nu_expected = model.lipschitz / (2.0 * 4096f64.sqrt());
    let shards = draw_shards(&source, &cfg, &mut ClusterSim::new(4, cfg.seed).unwrap()).unwrap();
    let all: Vec<&Sample> = shards.iter().flat_map(|s| s.samples()).collect();
    let zero = vec![0.0; 10];
    let (h, r) = ls_normal_equations(&all, cfg.nu, &zero);
    let w_erm = solve(h.clone(), r);
    let mut gaps = vec![quadratic_gap(&h, &zero, &w_erm)];
    for e in 1..=epochs {
        let mut c = cfg.clone();
        c.epochs = e;
        let mut cluster = ClusterSim::new(4, c.seed).unwrap();
        let shards = draw_shards(&source, &c, &mut cluster).unwrap();
        let rep = dsvrg_run(&c, &shards, &source, &model, &domain, &mut cluster).unwrap();
        gaps.push(quadratic_gap(&h, &rep.w_hat, &w_erm));
    }
    let mut run = 0;
    let mut longest = 0;
    for w in gaps.windows(2) {
        run = if w[1] <= 0.5 * w[0] { run + 1 } else { 0 };
        longest = longest.max(run);
    }
    let ratios: Vec<String> = gaps.windows(2).map(|w| format!("{:.3}", w[1] / w[0])).collect();
    verdict(
        longest >= 5 && (cfg.nu - nu_expected).abs() <= 1e-15 * nu_expected,
        format!("{longest} consecutive halvings, per-epoch ratios [{}]", ratios.join(", ")),
    )
}

fn criterion_11() -> Verdict {
    let start = Instant::now();
    let mut runner = TestRunner::new(PropConfig {
        cases: 256,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let result = runner.run(&(0usize..3, 0.001f64..=1.0), |(qi, a0)| {
        let q: f64 = [0.01, 0.1, 0.5][qi];
        let target = q.sqrt();
        let mut prev = a0;
        let mut err = (a0 - target).abs();
        for _ in 0..400 {
            let next = catalyst_alpha_next(prev, q);
            let c = catalyst_coefficient(next, prev);
            proptest::prop_assert!(c.is_finite() && c >= 0.0, "coefficient {c} at alpha {prev}");
            let e = (next - target).abs();
            proptest::prop_assert!(e <= err + 1e-15, "distance grew from {err} to {e}");
            err = e;
            prev = next;
        }
        proptest::prop_assert!(err < 1e-9, "alpha {prev} not within 1e-9 of {target}");
        Ok(())
    });
    let elapsed = start.elapsed();
    let detail = match &result {
        Ok(()) => format!("256 cases, {:.3}s", elapsed.as_secs_f64()),
        Err(e) => e.to_string(),
    };
    verdict(result.is_ok() && within(elapsed, 1), detail)
}

fn run_cli(suite: &str, jobs: usize, out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_proxsim"))
        .args(["suite", suite, "--jobs", &jobs.to_string(), "--out"])
        .arg(out)
        .env_remove("PROXSIM_SEED_OFFSET")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn criterion_12() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for suite in ["anyb", "table1"] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ran = run_cli(suite, 1, a.path()) && run_cli(suite, 4, b.path());
        let (fa, fb) = (files(a.path()), files(b.path()));
        let svgs = fa.keys().filter(|k| k.ends_with(".svg")).count();
        let runs = String::from_utf8(fa.get("runs.csv").cloned().unwrap_or_default()).unwrap();
        let mut lines = runs.lines();
        let header_ok = lines.next() == Some(RUNS_HEADER);
        let width = RUNS_HEADER.split(',').count();
        let rows_ok = lines.all(|l| l.split(',').count() == width);
        let same = fa == fb;
        ok &= ran && same && svgs >= 1 && header_ok && rows_ok;
        notes.push(format!("{suite}: {} files identical {same}, {svgs} svg, schema {}", fa.len(), header_ok && rows_ok));
    }
    verdict(ok, notes.join("; "))
}

type Criterion = (&'static str, fn() -> Verdict);

#[test]
fn acceptance() {
    let criteria: [Criterion; 12] = [
        ("1 three-point prox inequality", criterion_1),
        ("2 weakly convex bound", criterion_2),
        ("3 rate slopes", criterion_3),
        ("4 any-minibatch invariance", criterion_4),
        ("5 stability bound", criterion_5),
        ("6 inexactness closure", criterion_6),
        ("7 resource identities", criterion_7),
        ("8 DANE contraction", criterion_8),
        ("9 degenerate reductions", criterion_9),
        ("10 DSVRG linear convergence", criterion_10),
        ("11 catalyst sequence", criterion_11),
        ("12 determinism and schema", criterion_12),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let v = f();
        println!("{} criterion {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        if !v.passed {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
