//! Deterministic log-log SVG plots: one polyline per series for the mean
//! and one polygon for its `+-2 SE` band.

use std::fmt::Write;

use proxsim_core::metrics::SweepResult;

use crate::error::{CliError, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl PlotStyle {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
        }
    }
}

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    /// Decade-aligned range covering `[min, max]` in log10 space.
    fn covering(min: f64, max: f64) -> Self {
        let (lo, hi) = (min.log10().floor(), max.log10().ceil());
        if lo == hi {
            Self { lo, hi: hi + 1.0 }
        } else {
            Self { lo, hi }
        }
    }

    fn frac(&self, v: f64) -> f64 {
        (v.log10() - self.lo) / (self.hi - self.lo)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn decade_label(e: f64) -> String {
    format!("1e{}", e as i64)
}

/// Renders the series on shared log axes. Points with non-positive axis
/// value or mean are skipped; the lower band edge is clipped to the axis.
pub fn emit_plot(series: &[SweepResult], style: &PlotStyle) -> Result<String> {
    let usable: Vec<Vec<(f64, f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|p| p.value > 0.0 && p.mean > 0.0 && p.mean.is_finite())
                .map(|p| (p.value, p.mean, if p.stderr.is_finite() { p.stderr } else { 0.0 }))
                .collect()
        })
        .collect();
    if usable.iter().all(|pts| pts.len() < 2) {
        return Err(CliError::Plot("need at least two positive points in some series".into()));
    }
    let xs = usable.iter().flatten().map(|p| p.0);
    let (x_min, x_max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if x_min == x_max {
        return Err(CliError::Plot("degenerate x axis".into()));
    }
    let y_min = usable.iter().flatten().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y_max = usable.iter().flatten().map(|p| p.1 + 2.0 * p.2).fold(f64::NEG_INFINITY, f64::max);
    let (xa, ya) = (Axis::covering(x_min, x_max), Axis::covering(y_min, y_max));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + xa.frac(x) * pw;
    let py = |y: f64| TOP + (1.0 - ya.frac(y).clamp(0.0, 1.0)) * ph;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&style.title)
    )
    .unwrap();
    writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#333"/>"##
    )
    .unwrap();
    for e in (xa.lo as i64)..=(xa.hi as i64) {
        let x = px(10f64.powi(e as i32));
        writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 16.0,
            decade_label(e as f64)
        )
        .unwrap();
    }
    for e in (ya.lo as i64)..=(ya.hi as i64) {
        let y = py(10f64.powi(e as i32));
        writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            decade_label(e as f64)
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(&style.x_label)
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&style.y_label)
    )
    .unwrap();
    for (i, (s, pts)) in series.iter().zip(&usable).enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let upper: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1 + 2.0 * p.2))).collect();
        let lower: Vec<String> = pts
            .iter()
            .rev()
            .map(|p| {
                let lo = p.1 - 2.0 * p.2;
                let y = if lo > 0.0 { py(lo) } else { TOP + ph };
                format!("{:.2},{:.2}", px(p.0), y)
            })
            .collect();
        writeln!(
            svg,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        )
        .unwrap();
        let line: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1))).collect();
        writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        )
        .unwrap();
        let ly = TOP + 8.0 + 16.0 * i as f64;
        let lx = LEFT + pw + 10.0;
        writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 18.0,
            lx + 22.0,
            ly + 4.0,
            escape(&s.label)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
