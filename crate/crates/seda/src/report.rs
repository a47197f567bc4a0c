//! Static SVG line plots of a run's metrics log.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::codec;
use crate::error::{Error, Result};
use crate::pipeline::{self, MetricRecord};

const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Renders the series as polylines on shared axes. Non-finite points are
/// skipped.
pub fn line_plot(title: &str, x_label: &str, series: &[Series]) -> String {
    let pts = || series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts() {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title))
        .unwrap();
    writeln!(s, r#"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="black"/>"#, H - PAD, W - PAD).unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(xv), H - PAD + 16.0, tick(xv))
            .unwrap();
        writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, PAD - 4.0, sy(yv) + 4.0, tick(yv))
            .unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_label)).unwrap();
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y)))
            .collect();
        if !path.is_empty() {
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "))
                .unwrap();
        }
        let ly = PAD + 14.0 * k as f64;
        writeln!(s, r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#, W - PAD - 110.0, ly - 9.0)
            .unwrap();
        writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, W - PAD - 96.0, escape(&ser.name)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Global iteration of a record: stage-3 iterations continue after stage 1.
fn global_iter(r: &MetricRecord, stage1_iters: usize) -> f64 {
    (if r.stage == 3 { stage1_iters + r.log.iter } else { r.log.iter }) as f64
}

/// Writes `losses.svg`, `discriminators.svg`, `learning_rates.svg` and
/// `entropy.svg` into `out` and returns their paths.
pub fn render_run(metrics: &Path, stage1_iters: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let records = pipeline::read_metrics(metrics)?;
    if records.is_empty() {
        return Err(Error::Precondition(format!("{} holds no records", metrics.display())));
    }
    let series = |name: &str, f: &dyn Fn(&MetricRecord) -> f64| Series {
        name: name.to_string(),
        points: records.iter().map(|r| (global_iter(r, stage1_iters), f(r))).collect(),
    };
    let names = ["sem_seg", "lovasz", "sem_adv", "edge_seg", "edge_adv", "edge_con", "uasl"];
    let losses: Vec<Series> = names
        .iter()
        .enumerate()
        .filter(|(k, _)| records.iter().any(|r| r.log.components.named()[*k].1 != 0.0))
        .map(|(k, n)| series(n, &|r: &MetricRecord| r.log.components.named()[k].1))
        .collect();
    let plots = [
        ("losses.svg", "Loss terms", losses),
        (
            "discriminators.svg",
            "Discriminator losses",
            vec![series("D_sem", &|r| r.log.disc_sem), series("D_eg", &|r| r.log.disc_edge)],
        ),
        (
            "learning_rates.svg",
            "Learning rates",
            vec![series("generator", &|r| r.log.lr_gen), series("discriminator", &|r| r.log.lr_disc)],
        ),
        ("entropy.svg", "Mean target entropy", vec![series("entropy", &|r| r.log.entropy_mean)]),
    ];
    let mut paths = Vec::new();
    for (file, title, s) in plots {
        let path = out.join(file);
        codec::write_file(&path, line_plot(title, "iteration", &s).as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}
