//! Report files: JSON summary, CSV curve dumps and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::metrics::{success_threshold, BenchmarkReport, Summary};
use crate::error::{Error, Result};

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json(path: impl AsRef<Path>, report: &BenchmarkReport) -> Result<()> {
    write(path.as_ref(), serde_json::to_string_pretty(report)? + "\n")
}

/// `threshold,overall,<seq1>,<seq2>,…` for the precision curve.
pub fn precision_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from("threshold,overall");
    for s in &report.sequences {
        let _ = write!(out, ",{}", s.name);
    }
    out.push('\n');
    for (t, v) in report.overall.precision.iter().enumerate() {
        let _ = write!(out, "{t},{v}");
        for s in &report.sequences {
            let _ = write!(out, ",{}", s.precision[t]);
        }
        out.push('\n');
    }
    out
}

pub fn success_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from("threshold,overall");
    for s in &report.sequences {
        let _ = write!(out, ",{}", s.name);
    }
    out.push('\n');
    for (i, v) in report.overall.success.iter().enumerate() {
        let _ = write!(out, "{},{v}", success_threshold(i));
        for s in &report.sequences {
            let _ = write!(out, ",{}", s.success[i]);
        }
        out.push('\n');
    }
    out
}

/// One `name,sequences,dp20,auc` row per group.
pub fn summary_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from("group,sequences,dp20,auc\n");
    let mut row = |name: &str, s: &Summary| {
        let _ = writeln!(out, "{name},{},{},{}", s.sequences, s.dp20, s.auc);
    };
    row("overall", &report.overall);
    for (attr, s) in &report.by_attribute {
        row(&attr.to_string(), s);
    }
    for s in &report.sequences {
        let _ = writeln!(out, "{},1,{},{}", s.name, s.dp20, s.auc);
    }
    out
}

/// Line plot of `ys` against `xs` in a 400×300 SVG.
pub fn curve_svg(title: &str, x_label: &str, xs: &[f64], ys: &[f64]) -> String {
    let (w, h, m) = (400.0, 300.0, 40.0);
    let x_max = xs.iter().copied().fold(f64::MIN, f64::max).max(1e-12);
    let px = |x: f64| m + (w - 2.0 * m) * x / x_max;
    let py = |y: f64| h - m - (h - 2.0 * m) * y.clamp(0.0, 1.0);
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{m},{} L{},{} M{m},{m} L{m},{}" stroke="black"/>"#,
        h - m,
        w - m,
        h - m,
        h - m
    );
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        points.join(" ")
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#,
        w / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        w / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">0</text>"#,
        m - 4.0,
        h - m
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">1</text>"#,
        m - 4.0,
        m + 4.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Writes `report.json`, curve and summary CSVs and the two SVG plots into `dir`.
pub fn write_report(dir: impl AsRef<Path>, report: &BenchmarkReport) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(dir.join("report.json"), report)?;
    write(&dir.join("precision.csv"), precision_csv(report))?;
    write(&dir.join("success.csv"), success_csv(report))?;
    write(&dir.join("summary.csv"), summary_csv(report))?;
    let o = &report.overall;
    let px: Vec<f64> = (0..o.precision.len()).map(|t| t as f64).collect();
    write(
        &dir.join("precision.svg"),
        curve_svg(
            &format!("Precision (DP@20 = {:.3})", o.dp20),
            "location error threshold (px)",
            &px,
            &o.precision,
        ),
    )?;
    let sx: Vec<f64> = (0..o.success.len()).map(success_threshold).collect();
    write(
        &dir.join("success.svg"),
        curve_svg(
            &format!("Success (AUC = {:.3})", o.auc),
            "overlap threshold",
            &sx,
            &o.success,
        ),
    )
}
