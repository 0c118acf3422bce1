//! Self-contained SVG charts for training histories and sweeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bundle::{read_history, write_file, HISTORY_FILE};
use crate::error::{Error, Result};
use crate::experiment::{mean_f1_by_grid, read_sweep, SweepParam, SweepRow, SWEEP_FILE};
use crate::trainer::TrainHistory;

pub const TRAINING_SVG: &str = "training.svg";
pub const SWEEP_SVG: &str = "sweep.svg";

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 32.0;
const MARGIN_B: f64 = 40.0;
const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        } else if !log {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Axis { lo, hi, log }
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let mut out = Vec::new();
            let mut decade = self.lo.floor() as i32;
            while (decade as f64) <= self.hi.ceil() {
                for mult in [1.0, 2.0, 5.0] {
                    let t = mult * 10f64.powi(decade);
                    let u = t.log10();
                    if u >= self.lo - 1e-9 && u <= self.hi + 1e-9 {
                        out.push(t);
                    }
                }
                decade += 1;
            }
            out
        } else {
            (0..=4).map(|k| self.lo + (self.hi - self.lo) * k as f64 / 4.0).collect()
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Series<'a> {
    label: &'a str,
    points: Vec<(f64, f64)>,
    line: bool,
}

struct Panel<'a> {
    title: &'a str,
    x_label: &'a str,
    x_log: bool,
    series: Vec<Series<'a>>,
}

fn draw_panel(svg: &mut String, panel: &Panel<'_>, ox: f64, oy: f64) {
    let all = || panel.series.iter().flat_map(|s| s.points.iter().copied());
    let xa = Axis::fit(all().map(|p| p.0), panel.x_log);
    let ya = Axis::fit(all().map(|p| p.1), false);
    let (x0, y0) = (ox + MARGIN_L, oy + MARGIN_T);
    let (w, h) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
    let px = |v: f64| x0 + xa.unit(v) * w;
    let py = |v: f64| y0 + (1.0 - ya.unit(v)) * h;

    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#,
        x0 + w / 2.0,
        oy + 18.0,
        escape(panel.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{x0:.1}" y="{y0:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#333"/>"##
    );
    for t in xa.ticks() {
        let x = px(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#333"/><text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"##,
            y0 + h,
            y0 + h + 4.0,
            y0 + h + 15.0,
            fmt_tick(t)
        );
    }
    for t in ya.ticks() {
        let y = py(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="#333"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"##,
            x0 - 4.0,
            x0 - 6.0,
            y + 3.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#,
        x0 + w / 2.0,
        oy + PANEL_H - 8.0,
        escape(panel.x_label)
    );

    for (idx, s) in panel.series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let pts: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!panel.x_log || *x > 0.0))
            .map(|&(x, y)| (px(x), py(y)))
            .collect();
        if s.line && !pts.is_empty() {
            let mut d = String::new();
            for (k, (x, y)) in pts.iter().enumerate() {
                let _ = write!(d, "{}{x:.2},{y:.2}", if k == 0 { "M" } else { " L" });
            }
            let _ = writeln!(
                svg,
                r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
            );
        } else {
            for (x, y) in &pts {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}" fill-opacity="0.6"/>"#
                );
            }
        }
        let ly = y0 + 12.0 + 13.0 * idx as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="3" fill="{color}"/><text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#,
            x0 + w - 90.0,
            ly - 4.0,
            x0 + w - 76.0,
            ly,
            escape(s.label)
        );
    }
}

fn render(panels: &[Panel<'_>]) -> String {
    let width = PANEL_W * panels.len() as f64;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{PANEL_H:.0}" viewBox="0 0 {width:.0} {PANEL_H:.0}" font-family="sans-serif">"#
    );
    svg.push('\n');
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    svg.push('\n');
    for (k, panel) in panels.iter().enumerate() {
        draw_panel(&mut svg, panel, PANEL_W * k as f64, 0.0);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Three panels against epoch: loss, F1 and mean embedding distance.
pub fn training_svg(history: &TrainHistory) -> String {
    let epochs = |f: &dyn Fn(&crate::trainer::EpochRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        history
            .records
            .iter()
            .filter_map(|r| f(r).map(|v| (r.epoch as f64, v)))
            .collect()
    };
    render(&[
        Panel {
            title: "Cross-entropy loss",
            x_label: "epoch",
            x_log: false,
            series: vec![Series { label: "loss", points: epochs(&|r| Some(r.loss)), line: true }],
        },
        Panel {
            title: "Allocation F1",
            x_label: "epoch",
            x_log: false,
            series: vec![
                Series { label: "micro", points: epochs(&|r| Some(r.f1_micro)), line: true },
                Series { label: "macro", points: epochs(&|r| Some(r.f1_macro)), line: true },
            ],
        },
        Panel {
            title: "Mean item embedding distance",
            x_label: "epoch",
            x_log: false,
            series: vec![Series { label: "distance", points: epochs(&|r| r.mean_embed_dist), line: true }],
        },
    ])
}

/// Final micro-F1 against the swept value: one dot per repeat and a line
/// through the per-value means. Epsilon sweeps use a log-scaled x axis.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let param = rows.first().map_or(SweepParam::Epsilon, |r| r.grid_param);
    let x_log = param == SweepParam::Epsilon && rows.iter().all(|r| r.grid_value > 0.0);
    let repeats: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.final_f1_micro.map(|f| (r.grid_value, f)))
        .collect();
    let mut means = mean_f1_by_grid(rows);
    means.sort_by(|a, b| a.0.total_cmp(&b.0));
    let title = format!("Final F1 vs {param}");
    render(&[Panel {
        title: &title,
        x_label: param.name(),
        x_log,
        series: vec![
            Series { label: "mean", points: means, line: true },
            Series { label: "runs", points: repeats, line: false },
        ],
    }])
}

/// Renders every chart that has input in `results`; fails if there is none.
pub fn run_plot(results: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let history = results.join(HISTORY_FILE);
    if history.exists() {
        let path = out.join(TRAINING_SVG);
        write_file(&path, &training_svg(&read_history(&history)?))?;
        written.push(path);
    }
    let sweep = results.join(SWEEP_FILE);
    if sweep.exists() {
        let path = out.join(SWEEP_SVG);
        write_file(&path, &sweep_svg(&read_sweep(&sweep)?))?;
        written.push(path);
    }
    if written.is_empty() {
        return Err(Error::param(
            "results",
            format!("no {HISTORY_FILE} or {SWEEP_FILE} in {}", results.display()),
        ));
    }
    Ok(written)
}
