//! SVG line plots with the plotted numbers alongside as CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use epinv_core::{Error, Trajectory};

use crate::CliError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// One labelled trajectory.
pub struct Series<'a> {
    pub label: String,
    pub traj: &'a Trajectory,
}

struct Line {
    label: String,
    ys: Vec<f64>,
}

/// Writes `<channel>.svg` and `<channel>.csv` for every selected channel
/// plus `trajectory.svg` / `trajectory.csv` holding all of them. Every
/// series must share the first one's grid.
pub fn emit_plot(series: &[Series<'_>], channels: &[usize], labels: &[String], out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let first = series.first().ok_or_else(|| CliError::Usage("nothing to plot".into()))?;
    for s in series {
        s.traj.validate()?;
        if s.traj.n_states != first.traj.n_states || !same_grid(&s.traj.t_grid, &first.traj.t_grid) {
            return Err(Error::GridMismatch(format!(
                "series `{}` ({} points, {} channels) does not match `{}` ({} points, {} channels)",
                s.label,
                s.traj.n_samples(),
                s.traj.n_states,
                first.label,
                first.traj.n_samples(),
                first.traj.n_states
            ))
            .into());
        }
    }
    if let Some(&c) = channels.iter().find(|&&c| c >= first.traj.n_states) {
        return Err(CliError::Usage(format!("channel {c} out of range")));
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let t = &first.traj.t_grid;
    let mut written = Vec::new();
    let mut all = Vec::new();
    for &c in channels {
        let lines: Vec<Line> = series
            .iter()
            .map(|s| Line {
                label: if series.len() == 1 { labels[c].clone() } else { format!("{} {}", labels[c], s.label) },
                ys: s.traj.channel(c),
            })
            .collect();
        let title = format!("{} over time", labels[c]);
        written.push(write(out_dir.join(format!("{}.svg", labels[c])), &svg(&title, t, &lines))?);
        written.push(write(out_dir.join(format!("{}.csv", labels[c])), &csv(t, &lines))?);
        all.extend(lines);
    }
    written.push(write(out_dir.join("trajectory.svg"), &svg("All channels", t, &all))?);
    written.push(write(out_dir.join("trajectory.csv"), &csv(t, &all))?);
    Ok(written)
}

fn same_grid(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * y.abs().max(1.0))
}

fn write(path: PathBuf, body: &str) -> Result<PathBuf, CliError> {
    fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn csv(t: &[f64], lines: &[Line]) -> String {
    let mut s = String::from("t");
    for l in lines {
        s.push(',');
        s.push_str(&l.label.replace(',', ";"));
    }
    s.push('\n');
    for (k, tk) in t.iter().enumerate() {
        let _ = write!(s, "{tk}");
        for l in lines {
            let _ = write!(s, ",{}", l.ys[k]);
        }
        s.push('\n');
    }
    s
}

/// Tick positions at 1, 2 or 5 times a power of ten.
fn ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let mut out = Vec::new();
    let mut k = (lo / step).ceil();
    while k * step <= hi + 1e-9 * step {
        out.push(k * step);
        k += 1.0;
    }
    (out, decimals)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg(title: &str, t: &[f64], lines: &[Line]) -> String {
    let (t0, t1) = (t[0], *t.last().unwrap());
    let mut lo = lines.iter().flat_map(|l| l.ys.iter().copied()).fold(f64::INFINITY, f64::min);
    let mut hi = lines.iter().flat_map(|l| l.ys.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        lo -= 0.5 * hi.abs().max(1.0);
        hi += 0.5 * hi.abs().max(1.0);
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let x = |v: f64| LEFT + pw * (v - t0) / (t1 - t0);
    let y = |v: f64| TOP + ph * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let (xt, xd) = ticks(t0, t1);
    for v in xt {
        let px = x(v);
        let _ = writeln!(s, r##"<line x1="{px:.2}" y1="{TOP:.2}" x2="{px:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##, TOP + ph);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{v:.xd$}</text>"#, TOP + ph + 16.0);
    }
    let (yt, yd) = ticks(lo, hi);
    for v in yt {
        let py = y(v);
        let _ = writeln!(s, r##"<line x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e0e0e0"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.yd$}</text>"#, LEFT - 6.0, py + 4.0);
    }
    let _ = writeln!(s, r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">time</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">population</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (i, l) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if i / PALETTE.len() % 2 == 1 { r#" stroke-dasharray="6 3""# } else { "" };
        let mut pts = String::new();
        for (k, v) in l.ys.iter().enumerate() {
            if k > 0 {
                pts.push(' ');
            }
            let _ = write!(pts, "{:.2},{:.2}", x(t[k]), y(*v));
        }
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{pts}"/>"#);
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&l.label));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        let (t, d) = ticks(0.0, 200.0);
        assert_eq!(t, vec![0.0, 50.0, 100.0, 150.0, 200.0]);
        assert_eq!(d, 0);
        let (t, d) = ticks(0.0, 0.9);
        assert_eq!(t.len(), 5);
        assert_eq!(d, 1);
    }
}
