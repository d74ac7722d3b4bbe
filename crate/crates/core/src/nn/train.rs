use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{evaluate, forward, loss_and_grads, LayerSelection, ModelParams};
use super::NnError;
use crate::data::Dataset;
use crate::spectral::{measure_alpha, SpectralLossConfig};
use crate::Real;

/// Keeps the probe-batch stream apart from the shuffling stream.
const PROBE_SEED_SALT: u64 = 0x5eed_9b0b_e0f0_0001;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig<T> {
    /// At least 2: the spectrum of a single row is undefined.
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: T,
    pub adam: AdamConfig<T>,
    pub seed: u64,
    pub regularized_layers: LayerSelection,
    pub spectral: SpectralLossConfig<T>,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 1,
            learning_rate: T::lit(1e-4),
            adam: AdamConfig::default(),
            seed: 0,
            regularized_layers: LayerSelection::Last,
            spectral: SpectralLossConfig::default(),
        }
    }
}

impl<T: Real> TrainConfig<T> {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.batch_size < 2 {
            return Err(NnError::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if self.epochs == 0 {
            return Err(NnError::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= T::zero()) || !self.learning_rate.is_finite() {
            return Err(NnError::Config(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        self.adam.validate()?;
        self.spectral.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats<T> {
    /// 1-based.
    pub epoch: usize,
    /// Mean over batches of cross-entropy plus spectral loss.
    pub train_loss: T,
    pub cross_entropy: T,
    pub val_accuracy: f64,
    /// α of the first regularized layer on the fixed probe batch.
    pub alpha: Option<T>,
    /// Mean α over this epoch's training batches; `None` when the penalty is off.
    pub train_alpha: Option<T>,
    /// Batches whose spectral fit failed and trained on cross-entropy alone.
    pub spectral_failures: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History<T> {
    /// α on the probe batch before the first update.
    pub initial_alpha: Option<T>,
    pub epochs: Vec<EpochStats<T>>,
}

impl<T: Real> History<T> {
    pub fn final_alpha(&self) -> Option<T> {
        self.epochs.last().and_then(|e| e.alpha)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_accuracy)
    }

    /// First epoch whose probe α lies within `tolerance` of `target`.
    pub fn epochs_to_alpha(&self, target: T, tolerance: T) -> Option<usize> {
        self.epochs.iter().find(|e| e.alpha.is_some_and(|a| (a - target).abs() <= tolerance)).map(|e| e.epoch)
    }
}

/// α of `layer` on a fixed batch, or `None` if the fit fails.
fn probe_alpha<T: Real>(
    params: &ModelParams<T>,
    probe: &crate::linalg::Matrix<T>,
    layer: Option<usize>,
    spectral: &SpectralLossConfig<T>,
) -> Result<Option<T>, NnError> {
    let Some(layer) = layer else { return Ok(None) };
    let (_, trace) = forward(params, probe)?;
    Ok(measure_alpha(trace.activations(layer), spectral).ok().map(|fit| fit.alpha))
}

/// Adam on shuffled mini-batches; validation accuracy and probe α after each epoch.
///
/// A trailing batch with fewer than two samples is dropped.
pub fn train<T: Real>(
    params: &mut ModelParams<T>,
    train_set: &Dataset<T>,
    validation: &Dataset<T>,
    cfg: &TrainConfig<T>,
) -> Result<History<T>, NnError> {
    cfg.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    for set in [train_set, validation] {
        if set.images().cols() != params.input_shape().len() {
            return Err(NnError::InputShape { expected: params.input_shape().len(), got: set.images().cols() });
        }
        if set.classes() > params.classes() {
            return Err(NnError::Label { label: set.classes() - 1, classes: params.classes() });
        }
    }
    let regularized = cfg.regularized_layers.resolve(params.layers().len())?;
    if cfg.spectral.beta > T::zero() && regularized.is_empty() {
        return Err(NnError::Config("spectral penalty requested but the model has no hidden layer".into()));
    }
    let probe_layer = regularized.first().copied();
    let mut probe_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ PROBE_SEED_SALT);
    let mut probe_ids: Vec<usize> = (0..validation.len()).collect();
    probe_ids.shuffle(&mut probe_rng);
    probe_ids.truncate(cfg.batch_size.min(validation.len()));
    let (probe, _) = validation.batch(&probe_ids);

    let mut history =
        History { initial_alpha: probe_alpha(params, &probe, probe_layer, &cfg.spectral)?, epochs: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut ce_sum, mut batches, mut failures) = (T::zero(), T::zero(), 0usize, 0usize);
        let (mut alpha_sum, mut alpha_count) = (T::zero(), 0usize);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let at = |e: NnError| NnError::AtBatch { epoch, batch, source: Box::new(e) };
            let (images, labels) = train_set.batch(chunk);
            let step = loss_and_grads(params, &images, &labels, cfg).map_err(at)?;
            if !step.total_loss.is_finite() {
                return Err(at(NnError::NonFinite("training loss")));
            }
            adam_step(params, &step.grads, &mut adam, cfg.learning_rate, &cfg.adam).map_err(at)?;
            loss_sum += step.total_loss;
            ce_sum += step.cross_entropy;
            batches += 1;
            failures += usize::from(step.spectral_failed);
            if let Some(a) = step.measured_alpha {
                alpha_sum += a;
                alpha_count += 1;
            }
        }
        let denom = T::from_usize(batches.max(1)).unwrap();
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / denom,
            cross_entropy: ce_sum / denom,
            val_accuracy: evaluate(params, validation)?,
            alpha: probe_alpha(params, &probe, probe_layer, &cfg.spectral)?,
            train_alpha: (alpha_count > 0).then(|| alpha_sum / T::from_usize(alpha_count).unwrap()),
            spectral_failures: failures,
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.4} val_acc {:.4} alpha {}",
            cfg.epochs,
            stats.train_loss,
            stats.val_accuracy,
            stats.alpha.map_or("n/a".to_string(), |a| format!("{a:.3}"))
        );
        history.epochs.push(stats);
    }
    Ok(history)
}
