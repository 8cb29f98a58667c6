//! Experiment driver behind the `proxsim` binary.

pub mod check;
pub mod config;
pub mod error;
pub mod execute;
pub mod output;
pub mod plot;
pub mod suites;

use std::path::Path;

use crate::error::{io_err, Result};
use crate::execute::RunRecord;
use crate::plot::{emit_plot, PlotStyle};

/// Everything written for one `run` or `suite` invocation.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    /// File name and contents, in write order.
    pub files: Vec<(String, String)>,
    pub lines: Vec<String>,
}

fn axis_title(axis: &str) -> &str {
    match axis {
        "b" => "minibatch size b",
        "n_eps" => "samples n",
        "m" => "machines m",
        "K" => "inner iterations K",
        other => other,
    }
}

/// Builds the CSV tables, plots and suite summary for `records`.
/// Identical records produce byte-identical artifacts.
pub fn artifacts(name: &str, records: &[RunRecord]) -> Artifacts {
    let sweeps = output::sweeps(records);
    let mut files = vec![
        ("runs.csv".to_string(), output::runs_csv(records)),
        ("sweep.csv".to_string(), output::sweep_csv(&sweeps)),
    ];
    let mut lines = Vec::new();
    let axis = sweeps.iter().find(|s| s.axis != "none").map(|s| s.axis.clone());
    if let Some(axis) = axis {
        let swept: Vec<_> = sweeps.iter().filter(|s| s.axis == axis).cloned().collect();
        let style = PlotStyle::new(name, axis_title(&axis), "final suboptimality");
        match emit_plot(&swept, &style) {
            Ok(svg) => files.push((format!("{name}.svg"), svg)),
            Err(e) => lines.push(format!("no sweep plot: {e}")),
        }
    }
    let curves = output::convergence(records);
    if !curves.is_empty() {
        let style = PlotStyle::new(&format!("{name}: convergence"), "samples consumed", "suboptimality");
        match emit_plot(&curves, &style) {
            Ok(svg) => files.push((format!("{name}_convergence.svg"), svg)),
            Err(e) => lines.push(format!("no convergence plot: {e}")),
        }
    }
    let summary = suites::summarize(name, records, &sweeps);
    files.extend(summary.files);
    lines.extend(summary.lines);
    Artifacts { files, lines }
}

pub fn write_artifacts(dir: &Path, artifacts: &Artifacts) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (file, contents) in &artifacts.files {
        let path = dir.join(file);
        std::fs::write(&path, contents).map_err(io_err(&path))?;
    }
    Ok(())
}
