//! CSV emission. Column layouts are documented in `docs/schemas.md`.

use std::collections::BTreeMap;
use std::fmt::Write;

use proxsim_core::metrics::{mean_and_stderr, SweepPoint, SweepResult};

use crate::execute::RunRecord;

pub const RUNS_HEADER: &str = "label,algo,axis,axis_value,seed,d,n_eps,b,m,T,K,R,p,gamma,kappa,final_subopt,\
rounds,vectors_sent_per_machine,ops_total,ops_parallel,peak_samples,peak_vectors,hard_violations,soft_violations,status";

fn float(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn int(v: Option<f64>) -> String {
    v.map(|x| format!("{}", x as u64)).unwrap_or_default()
}

fn sanitize(msg: &str) -> String {
    msg.chars().map(|c| if matches!(c, ',' | '\n' | '\r' | '"') { ' ' } else { c }).collect()
}

/// One row per run, in execution-plan order.
pub fn runs_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(RUNS_HEADER);
    out.push('\n');
    for r in records {
        let report = r.report();
        let param = |k: &str| report.and_then(|rep| rep.param(k));
        let ledger = report.and_then(|rep| rep.ledger.as_ref());
        let status = match &r.outcome {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("error: {}", sanitize(e)),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.algo.name(),
            r.axis.map(|a| a.name()).unwrap_or(""),
            r.plan.axis_value.map(|v| v.to_string()).unwrap_or_default(),
            r.plan.seed,
            r.d,
            r.n_eps,
            r.b,
            r.m,
            int(param("T").or(param("epochs"))),
            int(param("K")),
            int(param("R")),
            int(param("p")),
            float(param("gamma").or(param("nu"))),
            float(param("kappa")),
            float(report.and_then(|rep| rep.final_subopt)),
            ledger.map(|l| l.rounds.to_string()).unwrap_or_default(),
            ledger.map(|l| l.vectors_sent_per_machine.to_string()).unwrap_or_default(),
            ledger.map(|l| l.ops_total().to_string()).unwrap_or_default(),
            ledger.map(|l| l.ops_parallel().to_string()).unwrap_or_default(),
            ledger.map(|l| l.max_peak_samples().to_string()).unwrap_or_default(),
            ledger.map(|l| l.max_peak_vectors().to_string()).unwrap_or_default(),
            r.hard_violations(),
            r.soft_violations(),
            status,
        )
        .unwrap();
    }
    out
}

/// Label, axis name and final suboptimalities per axis value.
type FinalGroup = (String, String, BTreeMap<u64, Vec<f64>>);

/// Label and one suboptimality series per seed.
type CurveGroup<'a> = (String, Vec<&'a [(u64, f64)]>);

/// Final suboptimality aggregated over seeds, one series per config.
/// Configs without a sweep contribute a single point at axis value 0.
pub fn sweeps(records: &[RunRecord]) -> Vec<SweepResult> {
    let mut grouped: BTreeMap<usize, FinalGroup> = BTreeMap::new();
    for r in records {
        let entry = grouped.entry(r.config_index).or_insert_with(|| {
            (r.label.clone(), r.axis.map(|a| a.name()).unwrap_or("none").to_string(), BTreeMap::new())
        });
        let bucket = entry.2.entry(r.plan.axis_value.unwrap_or(0)).or_default();
        if let Some(s) = r.report().and_then(|rep| rep.final_subopt) {
            bucket.push(s);
        }
    }
    grouped
        .into_values()
        .map(|(label, axis, points)| {
            let samples: Vec<(f64, Vec<f64>)> = points.into_iter().map(|(v, xs)| (v as f64, xs)).collect();
            SweepResult::from_samples(&axis, &label, &samples)
        })
        .collect()
}

pub fn sweep_csv(sweeps: &[SweepResult]) -> String {
    let mut out = format!("{}\n", SweepResult::CSV_HEADER);
    for s in sweeps {
        out.push_str(&s.csv_rows());
    }
    out
}

/// Mean suboptimality against samples consumed, one series per config and
/// sweep value. Seeds share a stride, so points align by index.
pub fn convergence(records: &[RunRecord]) -> Vec<SweepResult> {
    let mut grouped: BTreeMap<(usize, u64), CurveGroup<'_>> = BTreeMap::new();
    for r in records {
        let Some(rep) = r.report() else { continue };
        if rep.subopt_series.is_empty() {
            continue;
        }
        let label = match (r.axis, r.plan.axis_value) {
            (Some(a), Some(v)) => format!("{} {}={}", r.label, a.name(), v),
            _ => r.label.clone(),
        };
        grouped
            .entry((r.config_index, r.plan.axis_value.unwrap_or(0)))
            .or_insert_with(|| (label, Vec::new()))
            .1
            .push(&rep.subopt_series);
    }
    grouped
        .into_values()
        .map(|(label, series)| {
            let len = series.iter().map(|s| s.len()).min().unwrap_or(0);
            let points = (0..len)
                .map(|i| {
                    let xs: Vec<f64> = series.iter().map(|s| s[i].1).collect();
                    let (mean, stderr) = mean_and_stderr(&xs);
                    SweepPoint {
                        value: series[0][i].0 as f64,
                        mean,
                        stderr,
                        n_seeds: xs.len(),
                    }
                })
                .collect();
            SweepResult {
                axis: "samples".into(),
                label,
                points,
            }
        })
        .collect()
}
