//! Single training runs and their persisted records.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use specreg_core::attacks::robustness_curve;
use specreg_core::data::{load_cifar10, load_mnist, subset, synthetic_gaussian_classes, Dataset};
use specreg_core::nn::{checkpoint, train, ModelParams};

use crate::config::{DatasetSource, RunConfig};
use crate::error::ExperimentError;

pub const RECORD_FORMAT_VERSION: u32 = 1;
pub const DATA_DIR_ENV: &str = "SPECREG_DATA_DIR";

/// `$SPECREG_DATA_DIR`, else `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

fn dataset_dir(root: &Path, name: &str) -> PathBuf {
    let nested = root.join(name);
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub file: String,
    pub sha256: String,
}

/// Training and validation sets after subsetting.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub train: Dataset<f64>,
    pub validation: Dataset<f64>,
    pub digests: Vec<InputDigest>,
}

/// Loads the configured dataset from `root` and applies the subsets.
/// The training subset is drawn with the run seed, the validation subset with seed 0.
pub fn load_data_from(cfg: &RunConfig, root: &Path) -> Result<LoadedData, ExperimentError> {
    let seed = cfg.seed();
    let (train_set, validation) = match cfg.data.source {
        DatasetSource::Mnist => load_mnist(dataset_dir(root, "mnist"))?,
        DatasetSource::Cifar10 => load_cifar10(dataset_dir(root, "cifar10"))?,
        DatasetSource::Synthetic { classes, per_class, validation_per_class, dim, separation } => (
            synthetic_gaussian_classes(classes, per_class, dim, separation, seed)?,
            synthetic_gaussian_classes(classes, validation_per_class, dim, separation, seed ^ 0x9e37_79b9)?,
        ),
    };
    let digests = train_set
        .provenance()
        .iter()
        .chain(validation.provenance())
        .map(|d| InputDigest { file: d.file.clone(), sha256: d.sha256.clone() })
        .collect();
    let train_set = match cfg.data.train_subset {
        Some(n) => subset(&train_set, n, seed)?,
        None => train_set,
    };
    let validation = match cfg.data.validation_subset {
        Some(n) => subset(&validation, n, 0)?,
        None => validation,
    };
    Ok(LoadedData { train: train_set, validation, digests })
}

pub fn load_data(cfg: &RunConfig) -> Result<LoadedData, ExperimentError> {
    load_data_from(cfg, &data_dir())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub cross_entropy: f64,
    pub val_accuracy: f64,
    /// Probe-batch α.
    pub alpha: Option<f64>,
    pub train_alpha: Option<f64>,
    pub spectral_failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub attack: String,
    pub clean_accuracy: f64,
    /// `(ε, adversarial accuracy)`.
    pub points: Vec<(f64, f64)>,
    pub eps50: Option<f64>,
    pub samples: usize,
}

impl CurveRecord {
    pub fn accuracy_at(&self, epsilon: f64) -> Option<f64> {
        self.points.iter().find(|(e, _)| *e == epsilon).map(|(_, a)| *a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackVariant {
    pub mu: f64,
    pub iterations: usize,
    pub signed_step: bool,
    pub random_start: Option<u64>,
}

/// Everything needed to interpret and rerun one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub format_version: u32,
    pub code_version: String,
    /// Resolved config text; parses back to the config that produced this record.
    pub config: String,
    pub config_digest: String,
    pub preset: Option<String>,
    pub scale: String,
    pub dataset: String,
    pub seed: u64,
    pub beta: f64,
    /// `None` for unregularized runs.
    pub alpha_target: Option<f64>,
    pub initial_alpha: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub final_alpha: Option<f64>,
    pub final_val_accuracy: f64,
    pub robustness: Vec<CurveRecord>,
    pub attack_variant: AttackVariant,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub input_digests: Vec<InputDigest>,
    pub checkpoint: Option<String>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    /// Copy with timing zeroed, for comparing reruns.
    pub fn metrics(&self) -> RunRecord {
        RunRecord { wall_clock_secs: 0.0, ..self.clone() }
    }

    pub fn curve(&self, attack: &str) -> Option<&CurveRecord> {
        self.robustness.iter().find(|c| c.attack == attack)
    }
}

pub fn config_digest(cfg: &RunConfig) -> String {
    hex(&Sha256::digest(cfg.serialize().as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run_id(cfg: &RunConfig) -> String {
    let arch = cfg.preset.map_or("custom", |p| p.name());
    let target = if cfg.beta() > 0.0 { format!("a{}", cfg.alpha_target()) } else { "base".to_string() };
    format!("{arch}-b{}-{target}-s{}-{}", cfg.beta(), cfg.seed(), &config_digest(cfg)[..8])
}

/// Trains, evaluates and attacks; nothing is written to disk.
pub fn run_with_data(cfg: &RunConfig, data: &LoadedData) -> Result<(RunRecord, ModelParams<f64>), ExperimentError> {
    let started = Instant::now();
    let mut params = ModelParams::init(data.train.shape(), &cfg.layers, cfg.seed())
        .map_err(ExperimentError::runtime("model setup"))?;
    let history =
        train(&mut params, &data.train, &data.validation, &cfg.train).map_err(ExperimentError::runtime("training"))?;

    let attacked = match cfg.attack.samples {
        Some(n) if n < data.validation.len() => subset(&data.validation, n, 0)?,
        _ => data.validation.clone(),
    };
    let mut robustness = Vec::new();
    for &kind in &cfg.attack.kinds {
        let curve = robustness_curve(&params, &attacked, &cfg.attack.config(kind), &cfg.attack.epsilons)
            .map_err(ExperimentError::runtime("attack"))?;
        robustness.push(CurveRecord {
            attack: kind.name().to_string(),
            clean_accuracy: curve.clean_accuracy,
            points: curve.points,
            eps50: curve.eps50,
            samples: attacked.len(),
        });
    }

    let record = RunRecord {
        run_id: run_id(cfg),
        format_version: RECORD_FORMAT_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.serialize(),
        config_digest: config_digest(cfg),
        preset: cfg.preset.map(|p| p.name().to_string()),
        scale: cfg.scale.name().to_string(),
        dataset: cfg.data.source.name().to_string(),
        seed: cfg.seed(),
        beta: cfg.beta(),
        alpha_target: (cfg.beta() > 0.0).then(|| cfg.alpha_target()),
        initial_alpha: history.initial_alpha,
        final_alpha: history.final_alpha(),
        final_val_accuracy: history.final_accuracy().unwrap_or(0.0),
        history: history
            .epochs
            .iter()
            .map(|e| EpochRecord {
                epoch: e.epoch,
                train_loss: e.train_loss,
                cross_entropy: e.cross_entropy,
                val_accuracy: e.val_accuracy,
                alpha: e.alpha,
                train_alpha: e.train_alpha,
                spectral_failures: e.spectral_failures,
            })
            .collect(),
        robustness,
        attack_variant: AttackVariant {
            mu: cfg.attack.mu,
            iterations: cfg.attack.iterations,
            signed_step: cfg.attack.signed_step,
            random_start: cfg.attack.random_start,
        },
        train_samples: data.train.len(),
        validation_samples: data.validation.len(),
        input_digests: data.digests.clone(),
        checkpoint: None,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((record, params))
}

/// Appends one JSON line to `path`.
pub fn append_record(path: &Path, record: &RunRecord) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(ExperimentError::io(dir))?;
    }
    let line = serde_json::to_string(record).expect("records serialize");
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(ExperimentError::io(path))?;
    writeln!(file, "{line}").map_err(ExperimentError::io(path))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, ExperimentError> {
    let text = fs::read_to_string(path).map_err(ExperimentError::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ExperimentError::Records {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Writes the checkpoint (if enabled) and appends the record to `<output_dir>/records.jsonl`.
pub fn persist(
    cfg: &RunConfig,
    mut record: RunRecord,
    params: &ModelParams<f64>,
) -> Result<RunRecord, ExperimentError> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(ExperimentError::io(dir))?;
    if cfg.checkpoint {
        let path = dir.join(format!("{}.spfg", record.run_id));
        checkpoint::save(params, &path)?;
        record.checkpoint = Some(path.display().to_string());
    }
    append_record(&dir.join("records.jsonl"), &record)?;
    Ok(record)
}

/// Load, train, attack and persist.
pub fn run(cfg: &RunConfig) -> Result<RunRecord, ExperimentError> {
    let data = load_data(cfg)?;
    let (record, params) = run_with_data(cfg, &data)?;
    persist(cfg, record, &params)
}
