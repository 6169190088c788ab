//! CSV tables and dependency-free SVG line plots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use snlse_core::{EpsilonScaling, ErrorRecord, ErrorSeries};

use crate::LabError;

/// Round-trip exact rendering: 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_error(path: &Path, source: std::io::Error) -> LabError {
    LabError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_error(path: &Path, e: csv::Error) -> LabError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_error(path, source),
        other => io_error(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes `header` and `rows`; refuses an empty table.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), LabError> {
    if rows.is_empty() {
        return Err(LabError::Config(format!("refusing to write an empty table to {}", path.display())));
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        writer.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| io_error(path, e))
}

pub const CONVERGE_HEADER: [&str; 9] = ["scheme", "tau", "sigma", "p", "M", "error", "error_sq", "std_error", "slope_running"];
pub const LONGTERM_HEADER: [&str; 5] = ["scheme", "t", "error_sq", "std_error", "M"];
pub const EPS_HEADER: [&str; 6] = ["scheme", "epsilon", "q", "horizon", "error", "fitted_exponent"];

/// Convergence rows in decreasing `τ`, each with the slope fitted to the
/// rows so far, then one summary row `fit:<scheme>` holding the final slope.
pub fn converge_rows(records: &[ErrorRecord], sigma: f64, p: u32) -> Vec<Vec<String>> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| b.tau.total_cmp(&a.tau));
    let mut rows = Vec::with_capacity(sorted.len() + 1);
    let mut last_slope = String::new();
    for (i, r) in sorted.iter().enumerate() {
        let points: Vec<(f64, f64)> = sorted[..=i]
            .iter()
            .filter(|r| r.error_value > 0.0)
            .map(|r| (r.tau.ln(), r.error_value.ln()))
            .collect();
        let slope = snlse_core::linear_fit(&points).map(|f| fmt_real(f.slope)).unwrap_or_default();
        last_slope = slope.clone();
        rows.push(vec![
            r.scheme_kind.name().to_string(),
            fmt_real(r.tau),
            fmt_real(sigma),
            p.to_string(),
            r.num_paths_used.to_string(),
            fmt_real(r.error_value),
            fmt_real(r.error_sq),
            fmt_real(r.std_error),
            slope,
        ]);
    }
    if let Some(first) = sorted.first() {
        rows.push(vec![
            format!("fit:{}", first.scheme_kind.name()),
            String::new(),
            fmt_real(sigma),
            p.to_string(),
            first.num_paths_used.to_string(),
            String::new(),
            String::new(),
            String::new(),
            last_slope,
        ]);
    }
    rows
}

pub fn longterm_rows(series: &ErrorSeries) -> Vec<Vec<String>> {
    series
        .records
        .iter()
        .map(|r| {
            vec![
                series.scheme.name().to_string(),
                fmt_real(r.time),
                fmt_real(r.error_sq),
                fmt_real(r.std_error_sq),
                r.num_paths_used.to_string(),
            ]
        })
        .collect()
}

pub fn eps_rows(scheme: &str, q: f64, study: &EpsilonScaling) -> Vec<Vec<String>> {
    let exponent = study.fitted_exponent.map(fmt_real).unwrap_or_default();
    study
        .rows
        .iter()
        .map(|row| {
            vec![
                scheme.to_string(),
                fmt_real(row.epsilon),
                fmt_real(q),
                fmt_real(row.horizon),
                fmt_real(row.record.error_value),
                exponent.clone(),
            ]
        })
        .collect()
}

/// A named polyline.
pub struct PlotSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct PlotSpec<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub log_x: bool,
    pub log_y: bool,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line plot with optional log axes; points that cannot be shown on a log
/// axis are dropped.
pub fn svg_plot(spec: &PlotSpec<'_>, series: &[PlotSeries]) -> String {
    let (w, h, margin) = (640.0, 420.0, 60.0);
    let tx = |x: f64| if spec.log_x { x.log10() } else { x };
    let ty = |y: f64| if spec.log_y { y.log10() } else { y };
    let visible: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| (!spec.log_x || *x > 0.0) && (!spec.log_y || *y > 0.0) && x.is_finite() && y.is_finite())
                .map(|&(x, y)| (tx(x), ty(y)))
                .collect()
        })
        .collect();
    let all = visible.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| margin + (x - x0) / (x1 - x0) * (w - 2.0 * margin);
    let py = |y: f64| h - margin - (y - y0) / (y1 - y0) * (h - 2.0 * margin);
    let label = |v: f64, log: bool| if log { format!("1e{v:.1}") } else { format!("{v:.3}") };

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, spec.title);
    let _ = writeln!(
        svg,
        r#"<rect x="{margin}" y="{margin}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * margin,
        h - 2.0 * margin
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px(xv), h - margin + 16.0, label(xv, spec.log_x));
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, margin - 4.0, py(yv) + 4.0, label(yv, spec.log_y));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 12.0, spec.x_label);
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        spec.y_label
    );
    for (i, (s, pts)) in series.iter().zip(&visible).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        let ly = margin + 16.0 + 16.0 * i as f64;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{ly:.1}" fill="{color}" text-anchor="end">{}</text>"#, w - margin - 8.0, s.name);
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(path: &Path, spec: &PlotSpec<'_>, series: &[PlotSeries]) -> Result<PathBuf, LabError> {
    std::fs::write(path, svg_plot(spec, series)).map_err(|e| io_error(path, e))?;
    Ok(path.to_path_buf())
}
