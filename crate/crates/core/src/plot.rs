//! Hand-built SVG line charts: estimated states against truth, and squared
//! estimation error per tick on a log scale.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{DseError, Result};
use crate::genmodel::STATE_DIM;
use crate::harness::STATE_NAMES;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];
/// Squared errors below this are drawn at this value on log axes.
const LOG_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub y_label: String,
    pub log_y: bool,
    pub times: Vec<f64>,
    pub series: Vec<Series>,
}

/// Data range widened by 5% on each side; a degenerate range is opened up
/// around its value so constant series still get a visible axis.
pub fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span <= 0.0 {
        let pad = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{v:.1}")
    } else if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    }
}

impl Chart {
    fn transformed(&self, v: f64) -> f64 {
        if self.log_y {
            v.max(LOG_FLOOR).log10()
        } else {
            v
        }
    }

    /// `(x_min, x_max, y_min, y_max)` in plot coordinates (log10 for log axes).
    pub fn ranges(&self) -> (f64, f64, f64, f64) {
        let (t0, t1) = self
            .times
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
        let (y0, y1) = self
            .series
            .iter()
            .flat_map(|s| s.values.iter())
            .filter(|v| v.is_finite())
            .map(|&v| self.transformed(v))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let (x0, x1) = padded_range(t0, t1);
        let (y0, y1) = padded_range(y0, y1);
        (x0, x1, y0, y1)
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.ranges();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let px = |t: f64| LEFT + (t - x0) / (x1 - x0) * pw;
        let py = |v: f64| TOP + (y1 - v) / (y1 - y0) * ph;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{yb}" stroke="#ddd"/><text x="{x:.2}" y="{yl}" text-anchor="middle">{lab}</text>"##,
                x = px(xv),
                yb = TOP + ph,
                yl = TOP + ph + 16.0,
                lab = tick_label(xv, false)
            );
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{xr}" y2="{y:.2}" stroke="#ddd"/><text x="{xl}" y="{yt:.2}" text-anchor="end">{lab}</text>"##,
                y = py(yv),
                xr = LEFT + pw,
                xl = LEFT - 6.0,
                yt = py(yv) + 4.0,
                lab = tick_label(yv, self.log_y)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">time (s)</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 10.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
            escape(&self.y_label),
            y = TOP + ph / 2.0
        );
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let mut pts = String::new();
            for (&t, &v) in self.times.iter().zip(&s.values) {
                if v.is_finite() {
                    let _ = write!(pts, "{:.2},{:.2} ", px(t), py(self.transformed(v)));
                }
            }
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
                pts.trim_end()
            );
            let ly = TOP + 14.0 + 18.0 * k as f64;
            let _ = writeln!(
                svg,
                r#"<line x1="{x1}" y1="{ly}" x2="{x2}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{xt}" y="{yt}">{}</text>"#,
                escape(&s.label),
                x1 = LEFT + pw + 10.0,
                x2 = LEFT + pw + 30.0,
                xt = LEFT + pw + 36.0,
                yt = ly + 4.0
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Writes `state_<name>.svg` (truth and each estimate) and
/// `sqerr_<name>.svg` (squared error per estimate, log scale) for every
/// state. `estimates` pairs a label with per-tick state vectors aligned to
/// `times`.
pub fn emit_plots(
    times: &[f64],
    truth: &[[f64; STATE_DIM]],
    estimates: &[(String, Vec<[f64; STATE_DIM]>)],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    for (label, est) in estimates {
        if est.len() != times.len() {
            return Err(DseError::InvalidParameter(format!(
                "estimate `{label}` has {} samples, expected {}",
                est.len(),
                times.len()
            )));
        }
    }
    if truth.len() != times.len() {
        return Err(DseError::LengthMismatch {
            left: truth.len(),
            right: times.len(),
        });
    }
    let mut written = Vec::new();
    for (s, name) in STATE_NAMES.iter().enumerate() {
        let mut series = vec![Series {
            label: "truth".into(),
            values: truth.iter().map(|x| x[s]).collect(),
        }];
        series.extend(estimates.iter().map(|(label, est)| Series {
            label: label.clone(),
            values: est.iter().map(|x| x[s]).collect(),
        }));
        let chart = Chart {
            title: format!("{name}: estimate vs truth"),
            y_label: name.to_string(),
            log_y: false,
            times: times.to_vec(),
            series,
        };
        written.push(write_svg(dir, &format!("state_{name}.svg"), &chart)?);

        let errors = estimates
            .iter()
            .map(|(label, est)| Series {
                label: label.clone(),
                values: est.iter().zip(truth).map(|(e, x)| (e[s] - x[s]).powi(2)).collect(),
            })
            .collect();
        let chart = Chart {
            title: format!("{name}: squared error"),
            y_label: format!("({name} error)^2"),
            log_y: true,
            times: times.to_vec(),
            series: errors,
        };
        written.push(write_svg(dir, &format!("sqerr_{name}.svg"), &chart)?);
    }
    Ok(written)
}

fn write_svg(dir: &Path, file: &str, chart: &Chart) -> Result<PathBuf> {
    let path = dir.join(file);
    std::fs::write(&path, chart.to_svg()).map_err(|e| DseError::io(&path, e))?;
    Ok(path)
}
