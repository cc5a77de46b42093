//! Deterministic 2-D scatter plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use flowlda::Matrix;

use crate::error::{CliError, CliResult};

pub const SIZE: f64 = 600.0;
const MARGIN: f64 = 50.0;
const RADIUS: f64 = 2.5;

/// Eight colors that stay distinguishable side by side.
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub fn color(label: usize) -> &'static str {
    PALETTE[label % PALETTE.len()]
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Scatter of columns `axes` of `points`, one `<circle>` per row,
/// colored by label.
pub fn scatter_svg(points: &Matrix, labels: &[usize], axes: [usize; 2], title: &str) -> CliResult<String> {
    let [ax, ay] = axes;
    if points.rows() > 0 && (ax >= points.cols() || ay >= points.cols()) {
        return Err(CliError::usage(format!(
            "axes ({ax}, {ay}) out of range for {}-dimensional points",
            points.cols()
        )));
    }
    if labels.len() != points.rows() {
        return Err(CliError::usage(format!(
            "{} labels for {} points",
            labels.len(),
            points.rows()
        )));
    }
    let n = points.rows();
    let (x0, x1) = range((0..n).map(|i| points[(i, ax)]));
    let (y0, y1) = range((0..n).map(|i| points[(i, ay)]));
    let span = SIZE - 2.0 * MARGIN;
    let px = |v: f64| MARGIN + (v - x0) / (x1 - x0) * span;
    let py = |v: f64| SIZE - MARGIN - (v - y0) / (y1 - y0) * span;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="600" height="600" viewBox="0 0 600 600">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="600" height="600" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="300" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        escape(title)
    );
    let (l, r, t, b) = (MARGIN, SIZE - MARGIN, MARGIN, SIZE - MARGIN);
    let _ = writeln!(s, r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black"/>"#);
    for (pos, v) in [(l, x0), (r, x1)] {
        let _ = writeln!(
            s,
            r#"<text x="{pos}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{v:.2}</text>"#,
            b + 14.0
        );
    }
    for (pos, v) in [(b, y0), (t, y1)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{pos}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.2}</text>"#,
            l - 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="300" y="590" font-family="sans-serif" font-size="12" text-anchor="middle">dim {ax}</text>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="300" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 300)">dim {ay}</text>"#
    );

    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    for (k, &c) in classes.iter().enumerate().take(16) {
        let y = MARGIN + 12.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="8" height="8" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="10">class {c}</text>"#,
            SIZE - MARGIN + 4.0,
            y,
            color(c),
            SIZE - MARGIN + 15.0,
            y + 8.0
        );
    }

    for i in 0..n {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{RADIUS}" fill="{}" data-class="{}"/>"#,
            px(points[(i, ax)]),
            py(points[(i, ay)]),
            color(labels[i]),
            labels[i]
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_scatter(path: &Path, points: &Matrix, labels: &[usize], axes: [usize; 2], title: &str) -> CliResult<()> {
    let svg = scatter_svg(points, labels, axes, title)?;
    fs::write(path, svg).map_err(|e| CliError::io(path, e))
}
