use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::harness::HarnessError;
use crate::phasic::{read_metrics, MetricsRow};

#[derive(Clone, Debug, PartialEq)]
pub struct PlotOptions {
    /// Column of `metrics.csv` on the y axis.
    pub metric: String,
    /// EMA coefficient: `s = ema * s + (1 - ema) * x`. 0 disables smoothing.
    pub ema: f64,
    pub title: Option<String>,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            metric: "ep_return_mean".into(),
            ema: 0.9,
            title: None,
        }
    }
}

/// Mean and standard deviation across seeds of one smoothed metric.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn metric_value(row: &MetricsRow, name: &str) -> Option<f64> {
    Some(match name {
        "iteration" => row.iteration as f64,
        "phase" => row.phase as f64,
        "env_steps" => row.env_steps as f64,
        "episodes" => row.episodes as f64,
        "ep_return_mean" => row.ep_return_mean,
        "ep_len_mean" => row.ep_len_mean,
        "policy_loss" => row.policy_loss,
        "entropy" => row.entropy,
        "approx_kl" => row.approx_kl,
        "clip_frac" => row.clip_frac,
        "value_loss" => row.value_loss,
        "explained_var" => row.explained_var,
        "aux_loss" => row.aux_loss,
        "clone_kl" => row.clone_kl,
        "aux_value_loss" => row.aux_value_loss,
        _ => return None,
    })
}

/// Exponential moving average that carries the last value through NaNs.
pub fn ema(xs: &[f64], coef: f64) -> Vec<f64> {
    let mut s = f64::NAN;
    xs.iter()
        .map(|&x| {
            if x.is_finite() {
                s = if s.is_finite() { coef * s + (1.0 - coef) * x } else { x };
            }
            s
        })
        .collect()
}

/// `metrics.csv` files for a run: the path itself, `path/metrics.csv`, or
/// `path/seed-*/metrics.csv`.
fn metric_files(path: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let direct = path.join("metrics.csv");
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let entries = std::fs::read_dir(path).map_err(HarnessError::io(path))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("seed-"))
        .map(|e| e.path().join("metrics.csv"))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(HarnessError::Plot(format!("no metrics.csv under {}", path.display())));
    }
    Ok(files)
}

pub fn load_curve(path: &Path, opts: &PlotOptions) -> Result<Curve, HarnessError> {
    let mut series = Vec::new();
    let mut x = Vec::new();
    for f in metric_files(path)? {
        let rows = read_metrics(&f).map_err(|e| HarnessError::Plot(format!("{}: {e}", f.display())))?;
        if rows.is_empty() {
            return Err(HarnessError::Plot(format!("{}: no rows", f.display())));
        }
        let raw: Vec<f64> = rows
            .iter()
            .map(|r| metric_value(r, &opts.metric))
            .collect::<Option<_>>()
            .ok_or_else(|| HarnessError::Plot(format!("unknown metric `{}`", opts.metric)))?;
        if x.is_empty() || rows.len() < x.len() {
            x = rows.iter().map(|r| r.env_steps as f64).collect();
        }
        series.push(ema(&raw, opts.ema));
    }
    let n = x.len();
    let (mut mean, mut std) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let vals: Vec<f64> = series.iter().map(|s| s[i]).filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            mean.push(f64::NAN);
            std.push(f64::NAN);
            continue;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
        mean.push(m);
        std.push(v.sqrt());
    }
    let label = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(Curve { label, x, mean, std })
}

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Step counts as `0`, `500k`, `1.5M`.
pub fn format_steps(x: f64) -> String {
    if x.abs() >= 1e6 {
        let s = format!("{:.2}", x / 1e6);
        format!("{}M", s.trim_end_matches('0').trim_end_matches('.'))
    } else if x.abs() >= 1e3 {
        let s = format!("{:.1}", x / 1e3);
        format!("{}k", s.trim_end_matches('0').trim_end_matches('.'))
    } else {
        format!("{x:.0}")
    }
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

pub fn render_svg(curves: &[Curve], opts: &PlotOptions) -> String {
    let (w, h) = (800.0, 500.0);
    let (ml, mr, mt, mb) = (80.0, 20.0, 40.0, 60.0);
    let finite = |v: &f64| v.is_finite();
    let xmax = curves
        .iter()
        .flat_map(|c| c.x.iter().copied())
        .filter(finite)
        .fold(1.0, f64::max);
    let mut ylo = f64::INFINITY;
    let mut yhi = f64::NEG_INFINITY;
    for c in curves {
        for (m, s) in c.mean.iter().zip(&c.std) {
            if m.is_finite() {
                ylo = ylo.min(m - s);
                yhi = yhi.max(m + s);
            }
        }
    }
    if !ylo.is_finite() {
        (ylo, yhi) = (0.0, 1.0);
    }
    if yhi - ylo < 1e-9 {
        (ylo, yhi) = (ylo - 0.5, yhi + 0.5);
    }
    let pad = 0.05 * (yhi - ylo);
    let (ylo, yhi) = (ylo - pad, yhi + pad);
    let px = |x: f64| ml + x / xmax * (w - ml - mr);
    let py = |y: f64| mt + (yhi - y) / (yhi - ylo) * (h - mt - mb);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    if let Some(t) = &opts.title {
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="16">{}</text>"#, w / 2.0, escape(t));
    }
    let (x0, x1, y0, y1) = (ml, w - mr, mt, h - mb);
    let _ = writeln!(s, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
    for t in nice_ticks(0.0, xmax, 6) {
        let x = px(t);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y1 + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, y1 + 20.0, format_steps(t));
    }
    for t in nice_ticks(ylo, yhi, 6) {
        let y = py(t);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(s, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/>"##);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 8.0, y + 4.0, format_tick(t));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">environment steps</text>"#, (x0 + x1) / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&opts.metric)
    );
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64, f64)> = c
            .x
            .iter()
            .zip(&c.mean)
            .zip(&c.std)
            .filter(|((_, m), _)| m.is_finite())
            .map(|((&x, &m), &sd)| (x, m, sd))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let mut band = String::new();
        for &(x, m, sd) in &pts {
            let _ = write!(band, "{:.2},{:.2} ", px(x), py(m + sd));
        }
        for &(x, m, sd) in pts.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", px(x), py(m - sd));
        }
        let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.trim_end());
        let line: Vec<String> = pts.iter().map(|&(x, m, _)| format!("{:.2},{:.2}", px(x), py(m))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
        let ly = y0 + 16.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/>"#, x0 + 10.0, x0 + 30.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x0 + 36.0, ly + 4.0, escape(&c.label));
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(t: f64) -> String {
    let s = format!("{t:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One curve per run directory, written as SVG to `out`.
pub fn plot(runs: &[PathBuf], out: &Path, opts: &PlotOptions) -> Result<(), HarnessError> {
    if runs.is_empty() {
        return Err(HarnessError::Plot("no runs given".into()));
    }
    if !(0.0..1.0).contains(&opts.ema) {
        return Err(HarnessError::Config(format!("ema coefficient {} is not in [0, 1)", opts.ema)));
    }
    let curves = runs
        .iter()
        .map(|r| load_curve(r, opts))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(HarnessError::io(parent))?;
    }
    std::fs::write(out, render_svg(&curves, opts)).map_err(HarnessError::io(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_carries_through_nan() {
        let s = ema(&[f64::NAN, 1.0, f64::NAN, 3.0], 0.5);
        assert!(s[0].is_nan());
        assert_eq!(&s[1..], &[1.0, 1.0, 2.0]);
        assert_eq!(ema(&[1.0, 5.0], 0.0), vec![1.0, 5.0]);
    }

    #[test]
    fn step_labels() {
        assert_eq!(format_steps(0.0), "0");
        assert_eq!(format_steps(500_000.0), "500k");
        assert_eq!(format_steps(1_500_000.0), "1.5M");
        assert_eq!(format_steps(2_000_000.0), "2M");
    }

    #[test]
    fn ticks_cover_range() {
        let t = nice_ticks(0.0, 2e6, 6);
        assert_eq!(t.first(), Some(&0.0));
        assert!(t.last().unwrap() <= &2e6);
        assert!(t.len() >= 4);
    }
}
