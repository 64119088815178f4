//! Two-panel plot: CoM_z trajectories over CoM_z tracking errors.

use std::fmt::Write as _;
use std::path::Path;

use super::csv_log::CsvTrace;
use super::report::ExperimentReport;
use super::HarnessError;

/// One curve pair: measured CoM_z and its error.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub time: Vec<f64>,
    pub z: Vec<f64>,
    pub error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub title: String,
    /// Reference CoM_z, drawn dashed in the top panel.
    pub reference: Option<(Vec<f64>, Vec<f64>)>,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 640.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const MAX_POINTS: usize = 1500;

impl Figure {
    pub fn from_report(report: &ExperimentReport) -> Self {
        let reference = report.runs.first().map(|r| {
            (
                r.log.ticks.iter().map(|t| t.time).collect(),
                r.log.ticks.iter().map(|t| t.x_ref.y).collect(),
            )
        });
        Figure {
            title: format!(
                "CoM squat {:.0} mm at {} Hz",
                report.config.task.amplitude_m * 1e3,
                report.config.task.frequency_hz
            ),
            reference,
            series: report
                .runs
                .iter()
                .map(|r| Series {
                    label: r.label.clone(),
                    time: r.log.ticks.iter().map(|t| t.time).collect(),
                    z: r.log.ticks.iter().map(|t| t.x.y).collect(),
                    error: r.log.ticks.iter().map(|t| t.error_z()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_traces(title: &str, traces: &[(String, CsvTrace)]) -> Self {
        Figure {
            title: title.to_string(),
            reference: traces.first().map(|(_, t)| (t.time.clone(), t.xref_z.clone())),
            series: traces
                .iter()
                .map(|(label, t)| Series {
                    label: label.clone(),
                    time: t.time.clone(),
                    z: t.x_z.clone(),
                    error: t.err_z.clone(),
                })
                .collect(),
        }
    }

    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            escape(&self.title)
        );
        let t_range = range(self.series.iter().flat_map(|c| c.time.iter()).chain(self.reference.iter().flat_map(|r| r.0.iter())));
        let z_range = range(self.series.iter().flat_map(|c| c.z.iter()).chain(self.reference.iter().flat_map(|r| r.1.iter())));
        let e_range = range(self.series.iter().flat_map(|c| c.error.iter()));
        let top = Panel {
            y0: 40.0,
            y1: 300.0,
            t: t_range,
            v: z_range,
        };
        let bottom = Panel {
            y0: 350.0,
            y1: 600.0,
            t: t_range,
            v: e_range,
        };
        top.axes(&mut s, "CoM z (m)", false);
        bottom.axes(&mut s, "CoM z error (m)", true);
        if let Some((t, z)) = &self.reference {
            top.polyline(&mut s, t, z, "black", Some("6,4"));
        }
        for (i, c) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            top.polyline(&mut s, &c.time, &c.z, color, None);
            bottom.polyline(&mut s, &c.time, &c.error, color, None);
        }
        let lx = WIDTH - RIGHT + 15.0;
        let mut ly = 50.0;
        if self.reference.is_some() {
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="black" stroke-dasharray="6,4"/><text x="{}" y="{}">reference</text>"#,
                lx + 25.0,
                lx + 30.0,
                ly + 4.0
            );
            ly += 20.0;
        }
        for (i, c) in self.series.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                lx + 25.0,
                PALETTE[i % PALETTE.len()],
                lx + 30.0,
                ly + 4.0,
                escape(&c.label)
            );
            ly += 20.0;
        }
        s.push_str("</svg>\n");
        s
    }
}

#[derive(Clone, Copy)]
struct Panel {
    y0: f64,
    y1: f64,
    t: (f64, f64),
    v: (f64, f64),
}

impl Panel {
    fn px(&self, t: f64) -> f64 {
        LEFT + (t - self.t.0) / (self.t.1 - self.t.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        self.y1 - (v - self.v.0) / (self.v.1 - self.v.0) * (self.y1 - self.y0)
    }

    fn axes(&self, s: &mut String, ylabel: &str, time_label: bool) {
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let _ = writeln!(
            s,
            r##"<rect x="{x0}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            self.y0,
            x1 - x0,
            self.y1 - self.y0
        );
        for k in 0..=4 {
            let v = self.v.0 + (self.v.1 - self.v.0) * k as f64 / 4.0;
            let y = self.py(v);
            let _ = writeln!(
                s,
                r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
                x0 - 5.0,
                y + 4.0,
                tick_label(v)
            );
            let t = self.t.0 + (self.t.1 - self.t.0) * k as f64 / 4.0;
            let x = self.px(t);
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
                self.y1 + 15.0,
                tick_label(t)
            );
        }
        let mid = (self.y0 + self.y1) / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="18" y="{mid}" text-anchor="middle" transform="rotate(-90 18 {mid})">{}</text>"#,
            escape(ylabel)
        );
        if time_label {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">time (s)</text>"#,
                (x0 + x1) / 2.0,
                self.y1 + 32.0
            );
        }
    }

    fn polyline(&self, s: &mut String, t: &[f64], v: &[f64], color: &str, dash: Option<&str>) {
        let n = t.len().min(v.len());
        if n == 0 {
            return;
        }
        let stride = n.div_ceil(MAX_POINTS).max(1);
        let mut pts = String::new();
        for k in (0..n).step_by(stride).chain(std::iter::once(n - 1)) {
            if v[k].is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", self.px(t[k]), self.py(v[k]));
            }
        }
        let dash = dash.map(|d| format!(r#" stroke-dasharray="{d}""#)).unwrap_or_default();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
            pts.trim_end()
        );
    }
}

fn range<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1e-3) };
    (lo - pad, hi + pad)
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_svg(figure: &Figure, path: &Path) -> Result<(), HarnessError> {
    if figure.series.is_empty() {
        return Err(HarnessError::Config("nothing to plot: the report has no runs".into()));
    }
    std::fs::write(path, figure.to_svg()).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(label: &str, offset: f64) -> Series {
        let time: Vec<f64> = (0..5000).map(|k| k as f64 * 1e-3).collect();
        Series {
            label: label.into(),
            z: time.iter().map(|t| 0.7 + 0.06 * t.sin() - offset).collect(),
            error: time.iter().map(|_| offset).collect(),
            time,
        }
    }

    #[test]
    fn labels_and_curve_counts() {
        let fig = Figure {
            title: "a < b".into(),
            reference: Some((vec![0.0, 1.0], vec![0.7, 0.7])),
            series: vec![series("i−1", 0.004), series("i", 0.0004), series("i′", 0.002)],
        };
        let svg = fig.to_svg();
        assert_eq!(svg.matches("<polyline").count(), 7);
        assert!(svg.contains(">i−1<") && svg.contains(">i<") && svg.contains(">i′<"));
        assert!(svg.contains("a &lt; b"));
    }
}
