//! FGSM and PGD in the ℓ∞ ball, plus accuracy-vs-ε curves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::linalg::Matrix;
use crate::nn::{evaluate, input_gradient, input_gradient_with_losses, ModelParams, NnError};
use crate::Real;

/// Rows attacked per gradient pass.
const ATTACK_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "fgsm" => Some(AttackKind::Fgsm),
            "pgd" => Some(AttackKind::Pgd),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    /// PGD step size.
    pub mu: f64,
    pub iterations: usize,
    /// Step along `sgn(∇)` instead of the raw gradient.
    pub signed_step: bool,
    /// Seed for a uniform start inside the ε-box; `None` starts at the clean image.
    pub random_start: Option<u64>,
    pub pixel_bounds: (f64, f64),
}

impl AttackConfig {
    pub fn fgsm(epsilon: f64) -> Self {
        Self { kind: AttackKind::Fgsm, epsilon, ..Self::pgd(epsilon) }
    }

    pub fn pgd(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::Pgd,
            epsilon,
            mu: 0.01,
            iterations: 40,
            signed_step: false,
            random_start: None,
            pixel_bounds: (0.0, 1.0),
        }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(NnError::Config(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        let (lo, hi) = self.pixel_bounds;
        if !(lo < hi) {
            return Err(NnError::Config("pixel bounds must satisfy lo < hi".into()));
        }
        if self.kind == AttackKind::Pgd {
            if self.iterations == 0 {
                return Err(NnError::Config("PGD needs at least one iteration".into()));
            }
            if !(self.mu > 0.0) || !self.mu.is_finite() {
                return Err(NnError::Config(format!("PGD step mu must be positive, got {}", self.mu)));
            }
        }
        Ok(())
    }
}

fn sgn<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Clips `v` to `[x − ε, x + ε] ∩ [lo, hi]`.
fn project<T: Real>(v: T, x: T, eps: T, lo: T, hi: T) -> T {
    v.max(x - eps).min(x + eps).max(lo).min(hi)
}

fn check_pixels<T: Real>(batch: &Matrix<T>, cfg: &AttackConfig) -> Result<(), NnError> {
    let (lo, hi) = (T::lit(cfg.pixel_bounds.0), T::lit(cfg.pixel_bounds.1));
    if batch.as_slice().iter().any(|&p| !(p >= lo && p <= hi)) {
        return Err(NnError::Config("attack input has pixels outside the pixel bounds".into()));
    }
    Ok(())
}

/// One signed step of size ε, clipped to the pixel bounds.
pub fn fgsm<T: Real>(
    params: &ModelParams<T>,
    batch: &Matrix<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Matrix<T>, NnError> {
    cfg.validate()?;
    check_pixels(batch, cfg)?;
    if cfg.epsilon == 0.0 {
        // still validates shapes
        input_gradient(params, batch, labels)?;
        return Ok(batch.clone());
    }
    let grad = input_gradient(params, batch, labels)?;
    let (eps, lo, hi) = (T::lit(cfg.epsilon), T::lit(cfg.pixel_bounds.0), T::lit(cfg.pixel_bounds.1));
    let data = batch
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(&x, &g)| project(x + eps * sgn(g), x, eps, lo, hi))
        .collect();
    Ok(Matrix::from_vec(batch.rows(), batch.cols(), data)?)
}

/// Projected gradient ascent on each image's cross-entropy.
///
/// Every iterate is projected onto the ε-box and clipped to the pixel bounds.
/// Each image gets back the iterate with the highest loss seen, so the
/// attacked loss never falls below its starting value.
pub fn pgd<T: Real>(
    params: &ModelParams<T>,
    batch: &Matrix<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Matrix<T>, NnError> {
    cfg.validate()?;
    check_pixels(batch, cfg)?;
    let (eps, lo, hi) = (T::lit(cfg.epsilon), T::lit(cfg.pixel_bounds.0), T::lit(cfg.pixel_bounds.1));
    let mu = T::lit(cfg.mu);
    let mut current = batch.clone();
    if let Some(seed) = cfg.random_start {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (v, &x) in current.as_mut_slice().iter_mut().zip(batch.as_slice()) {
            let offset = if cfg.epsilon > 0.0 { rng.random_range(-cfg.epsilon..=cfg.epsilon) } else { 0.0 };
            *v = project(x + T::lit(offset), x, eps, lo, hi);
        }
    }
    let mut best = current.clone();
    let mut best_loss: Vec<T> = Vec::new();
    for it in 0..=cfg.iterations {
        let (losses, grad) = input_gradient_with_losses(params, &current, labels)?;
        if it == 0 {
            best_loss = losses;
        } else {
            for (r, &l) in losses.iter().enumerate() {
                if l > best_loss[r] {
                    best_loss[r] = l;
                    best.row_mut(r).copy_from_slice(current.row(r));
                }
            }
        }
        if it == cfg.iterations || cfg.epsilon == 0.0 {
            break;
        }
        let step = current.as_mut_slice().iter_mut().zip(grad.as_slice()).zip(batch.as_slice());
        for ((v, &g), &x) in step {
            let delta = if cfg.signed_step { mu * sgn(g) } else { mu * g };
            *v = project(*v + delta, x, eps, lo, hi);
        }
    }
    Ok(best)
}

pub fn attack<T: Real>(
    params: &ModelParams<T>,
    batch: &Matrix<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Matrix<T>, NnError> {
    match cfg.kind {
        AttackKind::Fgsm => fgsm(params, batch, labels, cfg),
        AttackKind::Pgd => pgd(params, batch, labels, cfg),
    }
}

/// Accuracy on attacked copies of every sample in `dataset`.
pub fn adversarial_accuracy<T: Real>(
    params: &ModelParams<T>,
    dataset: &Dataset<T>,
    cfg: &AttackConfig,
) -> Result<f64, NnError> {
    if dataset.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if cfg.epsilon == 0.0 {
        return evaluate(params, dataset);
    }
    let ids: Vec<usize> = (0..dataset.len()).collect();
    let mut correct = 0;
    for chunk in ids.chunks(ATTACK_CHUNK) {
        let (images, labels) = dataset.batch(chunk);
        let adv = attack(params, &images, &labels, cfg)?;
        let logits = crate::nn::predict(params, &adv)?;
        correct += labels.iter().enumerate().filter(|&(r, &y)| crate::nn::argmax(logits.row(r)) == y).count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Adversarial accuracy at each tested strength.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessCurve {
    pub kind: AttackKind,
    pub clean_accuracy: f64,
    /// `(ε, accuracy)`, ascending in ε.
    pub points: Vec<(f64, f64)>,
    /// Interpolated strength at which accuracy falls to half of clean accuracy.
    pub eps50: Option<f64>,
}

/// Linear interpolation of the first crossing of `clean / 2`.
pub fn eps50(points: &[(f64, f64)], clean_accuracy: f64) -> Option<f64> {
    let half = clean_accuracy / 2.0;
    let hit = points.iter().position(|&(_, acc)| acc <= half)?;
    if hit == 0 {
        return Some(points[0].0);
    }
    let (e0, a0) = points[hit - 1];
    let (e1, a1) = points[hit];
    if a0 == a1 {
        return Some(e1);
    }
    Some(e0 + (a0 - half) * (e1 - e0) / (a0 - a1))
}

/// `epsilons` must ascend and start at 0; `base` supplies μ, iterations and flags.
pub fn robustness_curve<T: Real>(
    params: &ModelParams<T>,
    dataset: &Dataset<T>,
    base: &AttackConfig,
    epsilons: &[f64],
) -> Result<RobustnessCurve, NnError> {
    if dataset.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if epsilons.first() != Some(&0.0) || epsilons.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(NnError::Config("epsilons must ascend strictly from 0".into()));
    }
    let clean_accuracy = evaluate(params, dataset)?;
    let mut points = vec![(0.0, clean_accuracy)];
    for &eps in &epsilons[1..] {
        let acc = adversarial_accuracy(params, dataset, &base.with_epsilon(eps))?;
        log::debug!("{} eps {eps}: accuracy {acc:.4}", base.kind.name());
        points.push((eps, acc));
    }
    Ok(RobustnessCurve { kind: base.kind, clean_accuracy, eps50: eps50(&points, clean_accuracy), points })
}

/// Strengths used for curves; contains 0.01, 0.05 and 0.1.
pub fn default_epsilon_grid() -> Vec<f64> {
    vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3]
}
