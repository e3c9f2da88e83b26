//! Minimal SVG line charts.

use std::fmt::Write as _;

use crate::experiments::{CellSummary, Experiment};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let m = raw / mag;
    let f = if m < 1.5 {
        1.0
    } else if m < 3.5 {
        2.0
    } else if m < 7.5 {
        5.0
    } else {
        10.0
    };
    f * mag
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

impl LineChart {
    fn x_transform(&self, x: f64) -> f64 {
        if self.log_x {
            x.log10()
        } else {
            x
        }
    }

    fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        let pts = || self.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
        let fold = |it: &mut dyn Iterator<Item = f64>| {
            it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (mut x0, mut x1) = fold(&mut pts().map(|p| self.x_transform(p.0)));
        let (mut y0, mut y1) = fold(&mut pts().map(|p| p.1));
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if !y0.is_finite() {
            (y0, y1) = (0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            (x0, x1) = (x0 - 0.5, x1 + 0.5);
        }
        if y1 - y0 < 1e-12 {
            (y0, y1) = (y0 - 0.05, y1 + 0.05);
        }
        let pad = (y1 - y0) * 0.05;
        ((x0, x1), (y0 - pad, y1 + pad))
    }

    pub fn to_svg(&self) -> String {
        let ((x0, x1), (y0, y1)) = self.bounds();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (self.x_transform(x) - x0) / (x1 - x0) * pw;
        let sxt = |t: f64| LEFT + (t - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&self.title)).unwrap();
        writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        )
        .unwrap();

        // y ticks
        let step = nice_step(y1 - y0);
        let mut t = (y0 / step).ceil() * step;
        while t <= y1 + 1e-12 {
            let y = sy(t);
            writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0).unwrap();
            writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/>"##, LEFT + pw).unwrap();
            writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, y + 4.0, fmt_tick(t)).unwrap();
            t += step;
        }

        // x ticks
        let xticks: Vec<(f64, String)> = if self.log_x {
            (x0.ceil() as i64..=x1.floor() as i64)
                .map(|e| (e as f64, fmt_tick(10f64.powi(e as i32))))
                .collect()
        } else {
            let step = nice_step(x1 - x0);
            let mut v = Vec::new();
            let mut t = (x0 / step).ceil() * step;
            while t <= x1 + 1e-12 {
                v.push((t, fmt_tick(t)));
                t += step;
            }
            v
        };
        let base = TOP + ph;
        for (t, label) in xticks {
            let x = sxt(t);
            writeln!(s, r#"<line x1="{x:.2}" y1="{base}" x2="{x:.2}" y2="{}" stroke="black"/>"#, base + 5.0).unwrap();
            writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"#, base + 18.0).unwrap();
        }
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0, escape(&self.x_label)).unwrap();
        writeln!(
            s,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        )
        .unwrap();

        for (i, series) in self.series.iter().enumerate() {
            let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let pts: Vec<String> = series.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"{dash}/>"#,
                pts.join(" "),
                series.color
            )
            .unwrap();
            for &(x, y) in &series.points {
                writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#, sx(x), sy(y), series.color).unwrap();
            }
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let lx = WIDTH - RIGHT + 12.0;
            writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/>"#,
                lx + 26.0,
                series.color
            )
            .unwrap();
            writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 32.0, ly + 4.0, escape(&series.label)).unwrap();
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Mean accuracy per noise level: solid for the corrected threshold, dashed
/// for 1/2. Training size (log scale) is the x-axis for the efficiency grid,
/// flip ratio for the flip-ratio grid.
pub fn summary_chart(experiment: Experiment, cells: &[CellSummary]) -> LineChart {
    let mut levels: Vec<f64> = cells.iter().filter(|c| c.experiment == experiment).map(|c| c.n).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let (title, x_label, log_x) = match experiment {
        Experiment::Fig2 => ("Accuracy vs training size", "training size", true),
        Experiment::Fig3 => ("Accuracy vs flip ratio", "flip ratio gamma0/gamma1", false),
    };
    let mut series = Vec::new();
    for (i, &n) in levels.iter().enumerate() {
        let mut pts: Vec<(f64, f64, f64)> = cells
            .iter()
            .filter(|c| c.experiment == experiment && c.n == n)
            .map(|c| {
                let x = match experiment {
                    Experiment::Fig2 => c.train_size as f64,
                    Experiment::Fig3 => c.ratio,
                };
                (x, c.mean_corrected, c.mean_naive)
            })
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = PALETTE[i % PALETTE.len()].to_string();
        series.push(Series {
            label: format!("n={n} corrected"),
            points: pts.iter().map(|p| (p.0, p.1)).collect(),
            dashed: false,
            color: color.clone(),
        });
        series.push(Series {
            label: format!("n={n} naive"),
            points: pts.iter().map(|p| (p.0, p.2)).collect(),
            dashed: true,
            color,
        });
    }
    LineChart {
        title: title.into(),
        x_label: x_label.into(),
        y_label: "mean clean-test accuracy".into(),
        log_x,
        series,
    }
}
