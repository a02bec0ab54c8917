//! CSV tables and SVG line charts for loss curves and temporal-consistency
//! curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::eval::EvalRecord;
use crate::pipeline::train::EpochRecord;

pub fn write_loss_csv(path: impl AsRef<Path>, log: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in log {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

/// A named polyline.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Minimal SVG line chart with axes, min/max tick labels and a legend.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 70.0, 150.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|p| p.0.is_finite() && p.1.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
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
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, ml + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{ml},{mt} V{} H{}" fill="none" stroke="black"/>"#,
        mt + ph,
        ml + pw
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, ml + pw / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(y_label)
    );
    for (v, x, y, anchor) in [
        (x0, sx(x0), mt + ph + 16.0, "start"),
        (x1, sx(x1), mt + ph + 16.0, "end"),
    ] {
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{}</text>"#, fmt_tick(v));
    }
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1) + 10.0)] {
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, ml - 6.0, fmt_tick(v));
    }
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
        }
        let ly = mt + 14.0 + 18.0 * i as f64;
        let lx = ml + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#, ly - 4.0, lx + 20.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, lx + 26.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Per-frame mean displacement averaged over the sequences of one run.
pub fn mean_curve(records: &[EvalRecord]) -> Vec<(f64, f64)> {
    let mut by_t: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = by_t.entry(r.t).or_default();
        e.0 += r.mean_disp;
        e.1 += 1;
    }
    by_t.into_iter().map(|(t, (s, n))| (t as f64, s / n as f64)).collect()
}

#[derive(Debug, Serialize)]
struct CurveRow<'a> {
    run: &'a str,
    seq_id: &'a str,
    t: usize,
    mean_disp: f64,
}

#[derive(Debug, Serialize)]
struct LossRow<'a> {
    run: &'a str,
    epoch: usize,
    step: u64,
    loss: f64,
    sim: f64,
    smooth: f64,
}

/// Per-run summary; with one run per smoothness weight this is the
/// weight-sweep table.
#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub run: String,
    pub mean_dice: Option<f64>,
    pub mean_neg_jac_pct: f64,
    pub mean_abs_jm1: f64,
    pub mean_epe: Option<f64>,
    pub median_tc_index: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

pub fn summarize(run: &str, records: &[EvalRecord]) -> RunSummary {
    let mut seq_tc: BTreeMap<&str, f64> = BTreeMap::new();
    for r in records {
        if let Some(tc) = r.tc_index {
            seq_tc.insert(&r.seq_id, tc);
        }
    }
    let mut tcs: Vec<f64> = seq_tc.into_values().collect();
    RunSummary {
        run: run.to_string(),
        mean_dice: mean(records.iter().filter_map(|r| r.dice)),
        mean_neg_jac_pct: mean(records.iter().map(|r| r.neg_jac_pct)).unwrap_or(0.0),
        mean_abs_jm1: mean(records.iter().map(|r| r.mean_abs_jm1)).unwrap_or(0.0),
        mean_epe: mean(records.iter().filter_map(|r| r.epe)),
        median_tc_index: median(&mut tcs),
    }
}

/// Writes loss and temporal-consistency tables and charts into `out`.
/// Returns the written paths.
pub fn plot(
    out: impl AsRef<Path>,
    losses: &[(String, Vec<EpochRecord>)],
    evals: &[(String, Vec<EvalRecord>)],
) -> Result<Vec<PathBuf>> {
    let out = out.as_ref();
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    if !losses.is_empty() {
        let p = out.join("loss.csv");
        let mut w = csv::Writer::from_path(&p)?;
        for (run, log) in losses {
            for r in log {
                w.serialize(LossRow {
                    run,
                    epoch: r.epoch,
                    step: r.step,
                    loss: r.loss,
                    sim: r.sim,
                    smooth: r.smooth,
                })?;
            }
        }
        w.flush()?;
        written.push(p);
        let series: Vec<Series> = losses
            .iter()
            .map(|(run, log)| Series {
                label: run.clone(),
                points: log.iter().map(|r| (r.step as f64, r.loss)).collect(),
            })
            .collect();
        let p = out.join("loss.svg");
        std::fs::write(&p, svg_line_chart("Training loss", "optimizer step", "loss", &series))?;
        written.push(p);
    }
    if !evals.is_empty() {
        let p = out.join("tc.csv");
        let mut w = csv::Writer::from_path(&p)?;
        for (run, recs) in evals {
            for r in recs {
                w.serialize(CurveRow {
                    run,
                    seq_id: &r.seq_id,
                    t: r.t,
                    mean_disp: r.mean_disp,
                })?;
            }
        }
        w.flush()?;
        written.push(p);
        let series: Vec<Series> = evals
            .iter()
            .map(|(run, recs)| Series {
                label: run.clone(),
                points: mean_curve(recs),
            })
            .collect();
        let p = out.join("tc.svg");
        std::fs::write(
            &p,
            svg_line_chart("Temporal consistency", "frame", "mean |phi| (px)", &series),
        )?;
        written.push(p);
        let p = out.join("summary.csv");
        let mut w = csv::Writer::from_path(&p)?;
        for (run, recs) in evals {
            w.serialize(summarize(run, recs))?;
        }
        w.flush()?;
        written.push(p);
    }
    Ok(written)
}
