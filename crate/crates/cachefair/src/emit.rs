//! CSV and SVG output of aggregated experiment rows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cachefair_core::PolicyKind;

use crate::error::{Error, Result};
use crate::experiment::{Metric, MetricRow};

pub const CSV_HEADER: [&str; 6] = ["sweep", "policy", "metric", "mean", "stderr", "runs"];

/// Floats are written in Rust's shortest round-trip form.
pub fn csv_string(rows: &[MetricRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.sweep.to_string(),
            r.policy.name().to_string(),
            r.metric.name().to_string(),
            r.mean.to_string(),
            r.stderr.to_string(),
            r.runs.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV of ASCII fields")
}

pub fn write_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Config(format!("{}: no rows to write", path.display())));
    }
    fs::write(path, csv_string(rows)).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str) -> std::result::Result<Vec<MetricRow>, String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(CSV_HEADER) {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        let field = |k: usize| record.get(k).ok_or_else(|| format!("row {}: missing field {}", line + 1, CSV_HEADER[k]));
        let float = |k: usize| -> std::result::Result<f64, String> {
            field(k)?.parse().map_err(|e| format!("row {}: {}: {e}", line + 1, CSV_HEADER[k]))
        };
        rows.push(MetricRow {
            sweep: float(0)?,
            policy: field(1)?.parse().map_err(|e| format!("row {}: {e}", line + 1))?,
            metric: Metric::parse(field(2)?).ok_or_else(|| format!("row {}: unknown metric", line + 1))?,
            mean: float(3)?,
            stderr: float(4)?,
            runs: field(5)?.parse().map_err(|e| format!("row {}: runs: {e}", line + 1))?,
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// A line chart of `metrics` against the sweep axis, one color per policy and
/// one dash pattern per metric, with a band of one standard error.
pub struct Chart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub metrics: &'a [Metric],
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

fn color(p: PolicyKind) -> &'static str {
    match p {
        PolicyKind::Fair => "#1b6ca8",
        PolicyKind::ClosestAvailable => "#d1495b",
        PolicyKind::Unsplittable => "#5c946e",
    }
}

fn dash(k: usize) -> &'static str {
    ["", "6 4", "2 3"][k % 3]
}

pub fn svg_string(rows: &[MetricRow], chart: &Chart) -> String {
    let chosen: Vec<&MetricRow> = rows.iter().filter(|r| chart.metrics.contains(&r.metric)).collect();
    let (mut x0, mut x1) = range(chosen.iter().map(|r| r.sweep));
    let (mut y0, mut y1) = range(chosen.iter().flat_map(|r| [r.mean - r.stderr, r.mean + r.stderr]));
    y0 = y0.min(0.0);
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(chart.title));
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            TOP + ph + 18.0,
            tick(xv)
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 6.0, sy(yv) + 4.0, tick(yv));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            LEFT + pw,
            sy(yv),
            sy(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(chart.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + ph / 2.0,
        escape(chart.y_label)
    );

    let mut legend = 0;
    for (k, &metric) in chart.metrics.iter().enumerate() {
        for policy in PolicyKind::ALL {
            let mut pts: Vec<&MetricRow> =
                chosen.iter().copied().filter(|r| r.metric == metric && r.policy == policy).collect();
            if pts.is_empty() {
                continue;
            }
            pts.sort_by(|a, b| a.sweep.total_cmp(&b.sweep));
            let upper = pts.iter().map(|r| format!("{:.2},{:.2}", sx(r.sweep), sy(r.mean + r.stderr)));
            let lower = pts.iter().rev().map(|r| format!("{:.2},{:.2}", sx(r.sweep), sy(r.mean - r.stderr)));
            let band: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(s, r#"<polygon points="{}" fill="{}" fill-opacity="0.15"/>"#, band.join(" "), color(policy));
            let line: Vec<String> = pts.iter().map(|r| format!("{:.2},{:.2}", sx(r.sweep), sy(r.mean))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2" stroke-dasharray="{}"/>"#,
                line.join(" "),
                color(policy),
                dash(k)
            );
            let ly = TOP + 10.0 + 18.0 * legend as f64;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{}" stroke-width="2" stroke-dasharray="{}"/>"#,
                lx + 24.0,
                color(policy),
                dash(k)
            );
            let _ = writeln!(s, r#"<text x="{}" y="{}">{} {}</text>"#, lx + 30.0, ly + 4.0, policy.name(), metric.name());
            legend += 1;
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_svg(path: &Path, rows: &[MetricRow], chart: &Chart) -> Result<()> {
    fs::write(path, svg_string(rows, chart)).map_err(|e| Error::io(path, e))
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
