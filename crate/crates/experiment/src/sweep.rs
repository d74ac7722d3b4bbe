//! (β, α_target) grids over a base config.
//!
//! Each cell writes `<output_dir>/records/<run_id>.jsonl` when it finishes;
//! `summary.json` and `summary.csv` are rebuilt from those files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::ExperimentError;
use crate::run::{append_record, config_digest, read_records, run_id, run_with_data, LoadedData, RunRecord};
use specreg_core::nn::checkpoint;

/// α targets spanning the range explored for the dense networks.
pub const DEFAULT_ALPHAS: [f64; 8] = [0.6, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0];
/// Unregularized, weak and strong.
pub const DEFAULT_BETAS: [f64; 3] = [0.0, 0.1, 1.0];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Independent seeds per grid point.
    pub replicates: usize,
    pub jobs: usize,
    pub resume: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { betas: DEFAULT_BETAS.to_vec(), alphas: DEFAULT_ALPHAS.to_vec(), replicates: 1, jobs: 1, resume: false }
    }
}

/// Cell configs in execution order. β = 0 collapses to one cell per replicate.
/// Cell `i` uses seed `base_seed ^ i`.
pub fn sweep_cells(base: &RunConfig, spec: &SweepSpec) -> Result<Vec<RunConfig>, ExperimentError> {
    if spec.betas.is_empty() || spec.alphas.is_empty() || spec.replicates == 0 {
        return Err(ExperimentError::Usage("sweep grids must be non-empty".into()));
    }
    if let Some(b) = spec.betas.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
        return Err(ExperimentError::Usage(format!("beta {b} must be finite and >= 0")));
    }
    if let Some(a) = spec.alphas.iter().find(|a| !a.is_finite()) {
        return Err(ExperimentError::Usage(format!("alpha {a} must be finite")));
    }
    let mut cells = Vec::new();
    for _ in 0..spec.replicates {
        for &beta in &spec.betas {
            let alphas: &[f64] = if beta == 0.0 { &spec.alphas[..1] } else { &spec.alphas };
            for &alpha in alphas {
                let mut cfg = base.clone();
                cfg.train.spectral.beta = beta;
                cfg.train.spectral.alpha_target = alpha;
                cfg.train.seed = base.train.seed ^ cells.len() as u64;
                cells.push(cfg);
            }
        }
    }
    Ok(cells)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub run_id: String,
    pub config_digest: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub attack: String,
    pub eps50: Option<f64>,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub seed: u64,
    pub beta: f64,
    pub alpha_target: Option<f64>,
    pub alpha_measured: Option<f64>,
    pub val_acc: f64,
    pub attacks: Vec<AttackSummary>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Ordered by measured α (missing last), then run id.
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
}

/// Pure function of its inputs.
pub fn summarize(records: &[RunRecord], failures: &[CellFailure]) -> Summary {
    let mut rows: Vec<SummaryRow> = records
        .iter()
        .map(|r| SummaryRow {
            run_id: r.run_id.clone(),
            seed: r.seed,
            beta: r.beta,
            alpha_target: r.alpha_target,
            alpha_measured: r.final_alpha,
            val_acc: r.final_val_accuracy,
            attacks: r
                .robustness
                .iter()
                .map(|c| AttackSummary { attack: c.attack.clone(), eps50: c.eps50, points: c.points.clone() })
                .collect(),
        })
        .collect();
    rows.sort_by(|a, b| {
        let key = |r: &SummaryRow| r.alpha_measured.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then_with(|| a.run_id.cmp(&b.run_id))
    });
    let mut failures = failures.to_vec();
    failures.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Summary { rows, failures }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<(), ExperimentError> {
    let json = dir.join("summary.json");
    fs::write(&json, serde_json::to_string_pretty(summary).expect("summary serializes"))
        .map_err(ExperimentError::io(&json))?;
    let csv_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| ExperimentError::io(&csv_path)(e.into()))?;
    let write = |w: &mut csv::Writer<fs::File>, row: &[String]| {
        w.write_record(row).map_err(|e| ExperimentError::io(&csv_path)(e.into()))
    };
    write(
        &mut w,
        &["run_id", "seed", "beta", "alpha_target", "alpha_measured", "val_acc", "attack", "eps50"].map(String::from),
    )?;
    for r in &summary.rows {
        let base = [
            r.run_id.clone(),
            r.seed.to_string(),
            r.beta.to_string(),
            opt(r.alpha_target),
            opt(r.alpha_measured),
            r.val_acc.to_string(),
        ];
        if r.attacks.is_empty() {
            write(&mut w, &[&base[..], &[String::new(), String::new()]].concat())?;
        }
        for a in &r.attacks {
            write(&mut w, &[&base[..], &[a.attack.clone(), opt(a.eps50)]].concat())?;
        }
    }
    w.flush().map_err(ExperimentError::io(&csv_path))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    /// Cell order.
    pub records: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
    pub resumed: usize,
    pub summary: Summary,
}

pub fn records_dir(output_dir: &Path) -> PathBuf {
    output_dir.join("records")
}

fn completed(path: &Path, digest: &str) -> Option<RunRecord> {
    let records = read_records(path).ok()?;
    records.into_iter().rev().find(|r| r.config_digest == digest)
}

/// Runs every cell (in parallel when `spec.jobs > 1`); failed cells are
/// recorded and the rest continue.
pub fn run_sweep(base: &RunConfig, spec: &SweepSpec, data: &LoadedData) -> Result<SweepOutcome, ExperimentError> {
    let cells = sweep_cells(base, spec)?;
    let out = &base.output_dir;
    let rec_dir = records_dir(out);
    fs::create_dir_all(&rec_dir).map_err(ExperimentError::io(&rec_dir))?;

    let mut results: Vec<Option<Result<RunRecord, CellFailure>>> = vec![None; cells.len()];
    let mut resumed = 0;
    if spec.resume {
        for (i, cfg) in cells.iter().enumerate() {
            let path = rec_dir.join(format!("{}.jsonl", run_id(cfg)));
            if let Some(record) = completed(&path, &config_digest(cfg)) {
                results[i] = Some(Ok(record));
                resumed += 1;
            }
        }
    }
    let pending: Vec<usize> = (0..cells.len()).filter(|&i| results[i].is_none()).collect();
    log::info!("sweep: {} cells, {} resumed, {} to run", cells.len(), resumed, pending.len());

    let next = AtomicUsize::new(0);
    let slots = Mutex::new(&mut results);
    let worker = || loop {
        let k = next.fetch_add(1, Ordering::SeqCst);
        let Some(&i) = pending.get(k) else { break };
        let cfg = &cells[i];
        let outcome = run_cell(cfg, data, &rec_dir).map_err(|e| CellFailure {
            run_id: run_id(cfg),
            config_digest: config_digest(cfg),
            error: e.to_string(),
        });
        if let Err(f) = &outcome {
            log::error!("cell {} failed: {}", f.run_id, f.error);
        }
        slots.lock().expect("no worker panicked")[i] = Some(outcome);
    };
    let jobs = spec.jobs.clamp(1, pending.len().max(1));
    std::thread::scope(|s| {
        for _ in 1..jobs {
            s.spawn(worker);
        }
        worker();
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results.into_iter().flatten() {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    let summary = summarize(&records, &failures);
    write_summary(out, &summary)?;
    Ok(SweepOutcome { records, failures, resumed, summary })
}

fn run_cell(cfg: &RunConfig, data: &LoadedData, rec_dir: &Path) -> Result<RunRecord, ExperimentError> {
    let (mut record, params) = run_with_data(cfg, data)?;
    if cfg.checkpoint {
        let dir = cfg.output_dir.join("checkpoints");
        fs::create_dir_all(&dir).map_err(ExperimentError::io(&dir))?;
        let path = dir.join(format!("{}.spfg", record.run_id));
        checkpoint::save(&params, &path)?;
        record.checkpoint = Some(path.display().to_string());
    }
    append_record(&rec_dir.join(format!("{}.jsonl", record.run_id)), &record)?;
    Ok(record)
}
