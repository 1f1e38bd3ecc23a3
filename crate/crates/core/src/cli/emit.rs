//! CSV, SVG chart and manifest output.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{MomentAudit, RateReport};

pub const CSV_HEADER: &str = "study,p,abscissa,error_mean,error_stderr,reps";

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("chart needs at least two rows with positive error, found {0}")]
    InsufficientRows(usize),
}

fn write_file(path: &Path, contents: &str) -> Result<(), EmitError> {
    fs::write(path, contents).map_err(|source| EmitError::Io { path: path.display().to_string(), source })
}

/// 17 significant digits.
fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "NaN".to_string()
    }
}

/// CSV for one or more reports; the header is written once.
pub fn render_csv(reports: &[RateReport]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let p = num(r.p);
        for row in &r.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.study,
                p,
                num(row.abscissa),
                num(row.error_mean),
                num(row.error_stderr),
                row.reps
            );
        }
        let (slope, intercept, r2) = match r.fit {
            Some(f) => (f.slope, f.intercept, f.r_squared),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        for (name, value) in [("slope", slope), ("intercept", intercept), ("r_squared", r2)] {
            let _ = writeln!(out, "{},{},{},{},,", r.study, p, name, num(value));
        }
    }
    out
}

pub fn emit_csv(report: &RateReport, destination: &Path) -> Result<(), EmitError> {
    write_file(destination, &render_csv(std::slice::from_ref(report)))
}

pub fn render_moment_csv(audits: &[MomentAudit]) -> String {
    let mut out = String::from("study,p,abscissa,moment_mean,moment_max,reps,diverged_runs\n");
    for a in audits {
        for row in &a.rows {
            let _ = writeln!(
                out,
                "moment_audit,{},{},{},{},{},{}",
                num(a.p),
                num(row.abscissa),
                num(row.moment_mean),
                num(row.moment_max),
                row.reps,
                row.diverged_runs
            );
        }
    }
    out
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 70.0;

struct LogAxis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl LogAxis {
    fn new(values: impl Iterator<Item = f64>, px_lo: f64, px_hi: f64) -> Self {
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.log10()), hi.max(v.log10()))
        });
        let pad = ((hi - lo) * 0.08).max(0.05);
        lo -= pad;
        hi += pad;
        Self { lo, hi, px_lo, px_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v.log10() - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

/// Self-contained SVG: measured errors, a dashed order-1/2 reference line
/// through the first point, the least-squares line and its slope.
pub fn render_loglog_chart(report: &RateReport) -> Result<String, EmitError> {
    let pts: Vec<(f64, f64)> = report
        .rows
        .iter()
        .filter(|r| r.error_mean > 0.0 && r.abscissa > 0.0)
        .map(|r| (r.abscissa, r.error_mean))
        .collect();
    if pts.len() < 2 {
        return Err(EmitError::InsufficientRows(pts.len()));
    }
    let reference_order = if report.study == "strong_in_dt" { 0.5 } else { -0.5 };
    let (x0, y0) = pts[0];
    let x_last = pts[pts.len() - 1].0;
    let reference = |x: f64| y0 * (x / x0).powf(reference_order);
    let fitted = report.fit.map(|f| move |x: f64| (f.intercept + f.slope * x.ln()).exp());

    let mut ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    ys.push(reference(x_last));
    if let Some(f) = &fitted {
        ys.push(f(x0));
        ys.push(f(x_last));
    }
    let xa = LogAxis::new(pts.iter().map(|p| p.0), MARGIN, WIDTH - MARGIN / 2.0);
    let ya = LogAxis::new(ys.into_iter(), HEIGHT - MARGIN, MARGIN / 2.0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<g stroke="black" stroke-width="1"><line x1="{m}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{m}" y1="{b}" x2="{m}" y2="{t}"/></g>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN / 2.0,
        t = MARGIN / 2.0
    );
    for &(x, _) in &pts {
        let px = xa.map(x);
        let _ = writeln!(
            svg,
            r#"<text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN + 16.0,
            short(x)
        );
    }
    let (dlo, dhi) = (ya.lo.floor() as i32, ya.hi.ceil() as i32);
    for e in dlo..=dhi {
        let v = 10f64.powi(e);
        let py = ya.map(v);
        if !(MARGIN / 2.0 - 0.5..=HEIGHT - MARGIN + 0.5).contains(&py) {
            continue;
        }
        let _ = writeln!(
            svg,
            r##"<line x1="{m}" y1="{py:.2}" x2="{r}" y2="{py:.2}" stroke="#ddd"/><text x="{tx}" y="{ty:.2}" font-size="11" text-anchor="end">1e{e}</text>"##,
            m = MARGIN,
            r = WIDTH - MARGIN / 2.0,
            tx = MARGIN - 6.0,
            ty = py + 4.0
        );
    }
    let x_label = if report.study == "strong_in_dt" { "step size" } else { "particles" };
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{x_label} (log scale)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">L{} error (log scale)</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        short(report.p)
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888" stroke-width="1.5" stroke-dasharray="6 4"/>"##,
        xa.map(x0),
        ya.map(y0),
        xa.map(x_last),
        ya.map(reference(x_last))
    );
    if let Some(f) = &fitted {
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#1f77b4" stroke-width="1.5"/>"##,
            xa.map(x0),
            ya.map(f(x0)),
            xa.map(x_last),
            ya.map(f(x_last))
        );
    }
    let _ = writeln!(svg, r##"<g fill="#d62728">"##);
    for &(x, y) in &pts {
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="4"/>"#, xa.map(x), ya.map(y));
    }
    let _ = writeln!(svg, "</g>");
    let slope_text = match report.fit {
        Some(f) => format!("fitted slope = {:.4}", f.slope),
        None => "fitted slope = n/a".to_string(),
    };
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="13">{slope_text}</text>"#,
        MARGIN + 10.0,
        MARGIN / 2.0 + 16.0
    );
    let _ = writeln!(
        svg,
        r##"<text x="{:.2}" y="{:.2}" font-size="12" fill="#555">dashed: reference order {reference_order:+}</text>"##,
        MARGIN + 10.0,
        MARGIN / 2.0 + 32.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_loglog_chart(report: &RateReport, destination: &Path) -> Result<(), EmitError> {
    write_file(destination, &render_loglog_chart(report)?)
}

fn short(v: f64) -> String {
    let log2 = v.log2();
    if (log2 - log2.round()).abs() < 1e-12 && log2.abs() >= 3.0 {
        format!("2^{}", log2.round() as i64)
    } else {
        format!("{v}")
    }
}

/// Everything needed to reproduce and audit one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Resolved TOML config; parsing it reproduces the run.
    pub config: String,
    pub run_seeds: Vec<u64>,
    pub reports: Vec<RateReport>,
    pub moment_audits: Vec<MomentAudit>,
    /// Not written to manifest files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn emit_manifest(manifest: &RunManifest, destination: &Path) -> Result<(), EmitError> {
    write_file(destination, &manifest.to_json())
}
