//! Built-in experiment suites and their summaries.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use proxsim_core::data::{rng_from_seed, write_libsvm};
use proxsim_core::losses::Sample;
use proxsim_core::metrics::{fit_rate_slope, SweepResult};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{parse_config, Algo, ExperimentConfig};
use crate::error::{io_err, CliError, Result};
use crate::execute::RunRecord;

pub const SUITE_NAMES: &[&str] = &["rates", "anyb", "sgd-vs-prox", "table1", "dane-k", "datasets"];

macro_rules! suite_files {
    ($($f:literal),* $(,)?) => {
        &[$(include_str!(concat!("../suites/", $f))),*]
    };
}

fn embedded(name: &str) -> Option<&'static [&'static str]> {
    Some(match name {
        "rates" => suite_files!("rates_weak.toml", "rates_strong.toml"),
        "anyb" => suite_files!("anyb_prox.toml", "anyb_sgd.toml"),
        "sgd-vs-prox" => suite_files!("sgd_vs_prox_prox.toml", "sgd_vs_prox_sgd.toml", "sgd_vs_prox_gd.toml"),
        "table1" => suite_files!(
            "table1_mp_dsvrg.toml",
            "table1_mp_dane.toml",
            "table1_dsvrg.toml",
            "table1_minibatch_sgd.toml",
            "table1_emso.toml",
        ),
        "dane-k" => suite_files!(
            "dane_k_sgd.toml",
            "dane_k_1.toml",
            "dane_k_2.toml",
            "dane_k_4.toml",
            "dane_k_8.toml",
            "dane_k_16.toml",
        ),
        _ => return None,
    })
}

#[derive(Debug, Clone)]
pub struct Suite {
    pub name: String,
    pub configs: Vec<ExperimentConfig>,
    /// Messages about how the suite was assembled.
    pub notes: Vec<String>,
}

/// Loads a suite. `datasets` reads `*.libsvm` files from `data_dir` and
/// falls back to generated stand-ins written under `out_dir`.
pub fn load_suite(name: &str, data_dir: &Path, out_dir: &Path) -> Result<Suite> {
    if name == "datasets" {
        return datasets_suite(data_dir, out_dir);
    }
    let files = embedded(name).ok_or_else(|| CliError::UnknownSuite(name.to_string()))?;
    let configs = files.iter().map(|t| parse_config(t)).collect::<Result<_>>()?;
    Ok(Suite {
        name: name.to_string(),
        configs,
        notes: Vec::new(),
    })
}

/// Datasets from the experiments table and the loss each is used with.
const KNOWN_DATASETS: &[(&str, &str)] = &[
    ("codrna", "logistic"),
    ("covtype", "logistic"),
    ("kddcup99", "logistic"),
    ("year", "least_squares"),
];

fn dataset_configs(tag: &str, path: &Path, loss: &str) -> Result<Vec<ExperimentConfig>> {
    let mut out = Vec::new();
    let series: [(&str, &str, &str); 4] = [
        ("minibatch_sgd", "minibatch_sgd", ""),
        ("K=1", "mp_dane", "K = 1"),
        ("K=4", "mp_dane", "K = 4"),
        ("K=16", "mp_dane", "K = 16"),
    ];
    for (label, algo, k) in series {
        let dane = if algo == "mp_dane" {
            format!("[mp_dane]\n{k}\nR = 1\nkappa = 0.0\ncertify = false\nlocal_solver = \"saga\"\nsaga_passes = 1\n")
        } else {
            String::new()
        };
        let text = format!(
            "name = \"datasets\"\nlabel = \"{tag} {label}\"\nalgo = \"{algo}\"\nseeds = [0, 1, 2]\n\n\
             [problem]\nkind = \"dataset\"\npath = {path:?}\nformat = \"libsvm\"\nloss = \"{loss}\"\nradius = 1.0\nlambda = 0.0001\n\n\
             [budget]\nn_eps = 16384\nb = 16\nm = 4\n\n[sweep]\naxis = \"b\"\nvalues = [16, 64, 256, 1024]\n\n{dane}",
            path = path.display().to_string(),
        );
        out.push(parse_config(&text)?);
    }
    Ok(out)
}

/// Deterministic stand-in with the shape of a libsvm benchmark.
fn stand_in(d: usize, n: usize, logistic: bool, seed: u64) -> Vec<Sample> {
    let mut rng = rng_from_seed(seed);
    let w: Vec<f64> = (0..d).map(|j| if j % 2 == 0 { 1.0 } else { -0.5 } / (d as f64).sqrt()).collect();
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
            let scale = 1.0 / (d as f64).sqrt();
            let x: Vec<f64> = x.into_iter().map(|v: f64| v * scale).collect();
            let margin: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            let noise: f64 = 0.3 * rng.random::<f64>() - 0.15;
            let y = if logistic {
                if margin + noise >= 0.0 { 1.0 } else { -1.0 }
            } else {
                margin + noise
            };
            Sample::new(x, y)
        })
        .collect()
}

fn datasets_suite(data_dir: &Path, out_dir: &Path) -> Result<Suite> {
    let mut configs = Vec::new();
    let mut notes = Vec::new();
    for (tag, loss) in KNOWN_DATASETS {
        let path = data_dir.join(format!("{tag}.libsvm"));
        if path.is_file() {
            configs.extend(dataset_configs(tag, &path, loss)?);
        }
    }
    if configs.is_empty() {
        let dir = out_dir.join("data");
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (tag, d, logistic, loss) in [("standin-logistic", 8, true, "logistic"), ("standin-squared", 20, false, "least_squares")] {
            let path: PathBuf = dir.join(format!("{tag}.libsvm"));
            std::fs::write(&path, write_libsvm(&stand_in(d, 20_000, logistic, 7))).map_err(io_err(&path))?;
            configs.extend(dataset_configs(tag, &path, loss)?);
        }
        notes.push(format!(
            "no benchmark files (codrna, covtype, kddcup99, year).libsvm in {}; ran on generated stand-ins",
            data_dir.display()
        ));
    }
    Ok(Suite {
        name: "datasets".into(),
        configs,
        notes,
    })
}

/// Suite-specific files and human-readable summary lines.
#[derive(Debug, Clone, Default)]
pub struct SuiteSummary {
    pub files: Vec<(String, String)>,
    pub lines: Vec<String>,
}

fn series<'a>(sweeps: &'a [SweepResult], label: &str) -> Option<&'a SweepResult> {
    sweeps.iter().find(|s| s.label == label)
}

fn mean_at(s: &SweepResult, value: f64) -> Option<f64> {
    s.points.iter().find(|p| p.value == value).map(|p| p.mean)
}

/// Closed-form resource counts for the implemented rows of the table.
fn table1(records: &[RunRecord]) -> SuiteSummary {
    let mut csv = String::from(
        "algo,seed,rounds,rounds_formula,ops_parallel,ops_parallel_formula,peak_samples,peak_samples_formula,match\n",
    );
    let mut lines = Vec::new();
    for r in records {
        let Some(rep) = r.report() else {
            lines.push(format!("{} seed {}: run failed", r.algo.name(), r.plan.seed));
            continue;
        };
        let Some(ledger) = rep.ledger.as_ref() else { continue };
        let p = |k: &str| rep.param(k).unwrap_or(f64::NAN) as u64;
        let (b, m, d) = (r.b as u64, r.m as u64, r.d as u64);
        let (rounds, ops, mem) = match r.algo {
            Algo::MpDsvrg => {
                let (k, t, pp) = (p("K"), p("T"), p("p"));
                (2 * k * t, k * t * (b + b / pp), b)
            }
            // Exact local solves charge `b d` each on top of the `b`
            // gradient evaluations.
            Algo::MpDane => {
                let (k, rr, t) = (p("K"), p("R"), p("T"));
                (2 * k * rr * t, k * rr * t * (b + b * d), b)
            }
            Algo::Dsvrg => {
                let (e, n) = (p("epochs"), p("n"));
                (2 * e, e * 2 * (n / m), n / m)
            }
            Algo::MinibatchSgd => {
                let t = p("T");
                (t, t * (b + 1), b)
            }
            Algo::Emso => {
                let t = p("T");
                (t, t * b * d, b)
            }
            Algo::ExactProx | Algo::InexactProx => continue,
        };
        let ok = ledger.rounds == rounds && ledger.ops_parallel() == ops && ledger.max_peak_samples() as u64 == mem;
        writeln!(
            csv,
            "{},{},{},{rounds},{},{ops},{},{mem},{ok}",
            r.algo.name(),
            r.plan.seed,
            ledger.rounds,
            ledger.ops_parallel(),
            ledger.max_peak_samples()
        )
        .unwrap();
        lines.push(format!(
            "{:<14} seed {}: rounds {} ops_parallel {} peak_samples {} [{}]",
            r.algo.name(),
            r.plan.seed,
            ledger.rounds,
            ledger.ops_parallel(),
            ledger.max_peak_samples(),
            if ok { "matches closed form" } else { "MISMATCH" }
        ));
    }
    SuiteSummary {
        files: vec![("table1.csv".into(), csv)],
        lines,
    }
}

pub fn summarize(name: &str, records: &[RunRecord], sweeps: &[SweepResult]) -> SuiteSummary {
    match name {
        "rates" => {
            let mut csv = String::from("label,slope,stderr\n");
            let mut lines = Vec::new();
            for s in sweeps {
                match fit_rate_slope(s) {
                    Ok((slope, se)) => {
                        writeln!(csv, "{},{slope:e},{se:e}", s.label).unwrap();
                        lines.push(format!("{}: slope {slope:.3} +- {se:.3}", s.label));
                    }
                    Err(e) => lines.push(format!("{}: {e}", s.label)),
                }
            }
            SuiteSummary {
                files: vec![("slopes.csv".into(), csv)],
                lines,
            }
        }
        "anyb" => {
            let mut lines = Vec::new();
            if let Some(s) = series(sweeps, "exact_prox") {
                let means: Vec<f64> = s.points.iter().map(|p| p.mean).collect();
                let max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
                lines.push(format!("exact_prox max/min mean subopt across b: {:.3}", max / min));
            }
            if let Some(s) = series(sweeps, "minibatch_sgd") {
                if let (Some(lo), Some(hi)) = (mean_at(s, 1.0), mean_at(s, 512.0)) {
                    lines.push(format!("minibatch_sgd subopt(b=512)/subopt(b=1): {:.3}", hi / lo));
                }
            }
            SuiteSummary { files: vec![], lines }
        }
        "table1" => table1(records),
        _ => SuiteSummary::default(),
    }
}
