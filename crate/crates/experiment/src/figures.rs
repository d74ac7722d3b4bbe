//! SVG figures and CSV tables from run records.
//!
//! Every CSV uses the columns
//! `run_id, beta, alpha_target, alpha_measured, epoch, val_acc, attack, epsilon, adv_acc`;
//! columns that do not apply to a figure are left empty. Values are written
//! with Rust's shortest round-trip formatting, so they parse back to the
//! exact values stored in the records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::ExperimentError;
use crate::run::{read_records, RunRecord};

pub const CSV_COLUMNS: [&str; 9] =
    ["run_id", "beta", "alpha_target", "alpha_measured", "epoch", "val_acc", "attack", "epsilon", "adv_acc"];

/// One CSV row; `None` cells are written empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvRow {
    pub run_id: String,
    pub beta: f64,
    pub alpha_target: Option<f64>,
    pub alpha_measured: Option<f64>,
    pub epoch: Option<usize>,
    pub val_acc: Option<f64>,
    pub attack: Option<String>,
    pub epsilon: Option<f64>,
    pub adv_acc: Option<f64>,
}

impl CsvRow {
    fn base(r: &RunRecord) -> Self {
        Self { run_id: r.run_id.clone(), beta: r.beta, alpha_target: r.alpha_target, ..Self::default() }
    }

    fn cells(&self) -> [String; 9] {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        [
            self.run_id.clone(),
            self.beta.to_string(),
            f(self.alpha_target),
            f(self.alpha_measured),
            self.epoch.map_or(String::new(), |e| e.to_string()),
            f(self.val_acc),
            self.attack.clone().unwrap_or_default(),
            f(self.epsilon),
            f(self.adv_acc),
        ]
    }
}

#[derive(Clone, Debug)]
struct Series {
    label: String,
    color: &'static str,
    points: Vec<(f64, f64)>,
    connect: bool,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Blue for the baseline, orange for weak and green for strong regularization.
fn beta_color(beta: f64) -> &'static str {
    match beta {
        b if b == 0.0 => PALETTE[0],
        b if b == 0.1 => PALETTE[1],
        b if b == 1.0 => PALETTE[2],
        b => PALETTE[3 + (b.to_bits() % 3) as usize],
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) =
        values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5_f64.max(lo.abs() * 0.1) };
    (lo - pad, hi + pad)
}

fn plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], hlines: &[(f64, &'static str)]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 420.0, 70.0, 160.0, 40.0, 50.0);
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).chain(hlines.iter().map(|l| l.0)));
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ =
            writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"#, sx(xv), top + ph + 15.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#, left - 5.0, sy(yv) + 4.0);
    }
    let _ =
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 10.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(ylabel)
    );
    for &(y, color) in hlines {
        let _ = writeln!(
            s,
            r#"<line x1="{left}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="4 3" stroke-opacity="0.6"/>"#,
            left + pw,
            sy(y),
            sy(y)
        );
    }
    for (k, ser) in series.iter().enumerate() {
        if ser.connect && ser.points.len() > 1 {
            let path: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{}" points="{}"/>"#, ser.color, path.join(" "));
        }
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#, sx(x), sy(y), ser.color);
        }
        let ly = top + 12.0 + 14.0 * k as f64;
        if ly < h - bottom {
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/>"#,
                w - right + 10.0,
                ly - 9.0,
                ser.color
            );
            let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, w - right + 25.0, escape(&ser.label));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn beta_label(beta: f64) -> String {
    if beta == 0.0 {
        "baseline".to_string()
    } else {
        format!("beta = {beta}")
    }
}

/// Groups points by β, in ascending β order.
fn by_beta(points: Vec<(f64, (f64, f64))>) -> Vec<Series> {
    let mut groups: BTreeMap<u64, (f64, Vec<(f64, f64)>)> = BTreeMap::new();
    for (beta, p) in points {
        groups.entry(beta.to_bits()).or_insert((beta, Vec::new())).1.push(p);
    }
    let mut out: Vec<Series> = groups
        .into_values()
        .map(|(beta, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { label: beta_label(beta), color: beta_color(beta), points, connect: false }
        })
        .collect();
    out.sort_by(|a, b| a.label.cmp(&b.label));
    out
}

/// A rendered figure and its table.
#[derive(Clone, Debug)]
pub struct Figure {
    pub name: String,
    pub svg: String,
    pub rows: Vec<CsvRow>,
}

fn attacks_in(records: &[RunRecord]) -> Vec<String> {
    let mut names: Vec<String> = records.iter().flat_map(|r| r.robustness.iter().map(|c| c.attack.clone())).collect();
    names.sort();
    names.dedup();
    names
}

pub fn build_figures(records: &[RunRecord], epsilon: f64) -> Result<Vec<Figure>, ExperimentError> {
    if records.is_empty() {
        return Err(ExperimentError::Records { path: PathBuf::new(), message: "no run records".into() });
    }
    let mut figures = Vec::new();

    // (a) validation accuracy over measured α
    let mut rows = Vec::new();
    let mut pts = Vec::new();
    for r in records {
        let epoch = r.history.last().map(|e| e.epoch);
        rows.push(CsvRow {
            alpha_measured: r.final_alpha,
            epoch,
            val_acc: Some(r.final_val_accuracy),
            ..CsvRow::base(r)
        });
        if let Some(a) = r.final_alpha {
            pts.push((r.beta, (a, r.final_val_accuracy)));
        }
    }
    figures.push(Figure {
        name: "accuracy_vs_alpha".into(),
        svg: plot(
            "Validation accuracy over measured alpha",
            "alpha (measured)",
            "validation accuracy",
            &by_beta(pts),
            &[],
        ),
        rows,
    });

    // (b) adversarial accuracy over measured α at one strength, per attack
    for attack in attacks_in(records) {
        let mut rows = Vec::new();
        let mut pts = Vec::new();
        for r in records {
            let Some(acc) = r.curve(&attack).and_then(|c| c.accuracy_at(epsilon)) else { continue };
            rows.push(CsvRow {
                alpha_measured: r.final_alpha,
                val_acc: Some(r.final_val_accuracy),
                attack: Some(attack.clone()),
                epsilon: Some(epsilon),
                adv_acc: Some(acc),
                ..CsvRow::base(r)
            });
            if let Some(a) = r.final_alpha {
                pts.push((r.beta, (a, acc)));
            }
        }
        figures.push(Figure {
            name: format!("adversarial_vs_alpha_{attack}"),
            svg: plot(
                &format!("{} accuracy at eps = {epsilon} over measured alpha", attack.to_uppercase()),
                "alpha (measured)",
                "adversarial accuracy",
                &by_beta(pts),
                &[],
            ),
            rows,
        });
    }

    // (c) measured α per epoch, with target lines
    let mut rows = Vec::new();
    let mut series = Vec::new();
    let mut targets = Vec::new();
    for r in records {
        let color = beta_color(r.beta);
        let mut points = Vec::new();
        for e in &r.history {
            rows.push(CsvRow {
                alpha_measured: e.alpha,
                epoch: Some(e.epoch),
                val_acc: Some(e.val_accuracy),
                ..CsvRow::base(r)
            });
            if let Some(a) = e.alpha {
                points.push((e.epoch as f64, a));
            }
        }
        series.push(Series { label: r.run_id.clone(), color, points, connect: true });
        if let Some(t) = r.alpha_target {
            if !targets.iter().any(|&(y, c)| y == t && c == color) {
                targets.push((t, color));
            }
        }
    }
    figures.push(Figure {
        name: "alpha_vs_epoch".into(),
        svg: plot("Measured alpha during training", "epoch", "alpha (measured)", &series, &targets),
        rows,
    });

    // (d) accuracy over attack strength, per attack
    for attack in attacks_in(records) {
        let mut rows = Vec::new();
        let mut series = Vec::new();
        for r in records {
            let Some(curve) = r.curve(&attack) else { continue };
            for &(eps, acc) in &curve.points {
                rows.push(CsvRow {
                    alpha_measured: r.final_alpha,
                    val_acc: Some(r.final_val_accuracy),
                    attack: Some(attack.clone()),
                    epsilon: Some(eps),
                    adv_acc: Some(acc),
                    ..CsvRow::base(r)
                });
            }
            series.push(Series {
                label: r.run_id.clone(),
                color: beta_color(r.beta),
                points: curve.points.clone(),
                connect: true,
            });
        }
        figures.push(Figure {
            name: format!("accuracy_vs_eps_{attack}"),
            svg: plot(
                &format!("{} accuracy over attack strength", attack.to_uppercase()),
                "epsilon",
                "adversarial accuracy",
                &series,
                &[],
            ),
            rows,
        });
    }
    Ok(figures)
}

/// All records in `*.jsonl` files below `dir`, de-duplicated by run id (last wins).
pub fn collect_records(dir: &Path) -> Result<Vec<RunRecord>, ExperimentError> {
    if !dir.is_dir() {
        return Err(ExperimentError::Records { path: dir.to_path_buf(), message: "not a directory".into() });
    }
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(ExperimentError::io(&d))? {
            let path = entry.map_err(ExperimentError::io(&d))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "jsonl") {
                files.push(path);
            }
        }
    }
    files.sort();
    let mut by_id: BTreeMap<String, RunRecord> = BTreeMap::new();
    for f in files {
        for r in read_records(&f)? {
            by_id.insert(r.run_id.clone(), r);
        }
    }
    Ok(by_id.into_values().collect())
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<(), ExperimentError> {
    let io = |e: csv::Error| ExperimentError::io(path)(e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(CSV_COLUMNS).map_err(io)?;
    for row in rows {
        w.write_record(row.cells()).map_err(io)?;
    }
    w.flush().map_err(ExperimentError::io(path))
}

/// Writes `<name>.svg` and `<name>.csv` for each figure; returns the paths written.
pub fn emit_figures(records: &[RunRecord], out_dir: &Path, epsilon: f64) -> Result<Vec<PathBuf>, ExperimentError> {
    let figures = build_figures(records, epsilon)?;
    fs::create_dir_all(out_dir).map_err(ExperimentError::io(out_dir))?;
    let mut written = Vec::new();
    for fig in figures {
        let svg = out_dir.join(format!("{}.svg", fig.name));
        fs::write(&svg, &fig.svg).map_err(ExperimentError::io(&svg))?;
        let csv = out_dir.join(format!("{}.csv", fig.name));
        write_csv(&csv, &fig.rows)?;
        written.extend([svg, csv]);
    }
    Ok(written)
}
