use super::model::{Gradients, ModelParams};
use super::NnError;
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig<T> {
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Real> Default for AdamConfig<T> {
    fn default() -> Self {
        Self { beta1: T::lit(0.9), beta2: T::lit(0.999), epsilon: T::lit(1e-7) }
    }
}

impl<T: Real> AdamConfig<T> {
    pub fn validate(&self) -> Result<(), NnError> {
        let unit = |v: T| v >= T::zero() && v < T::one();
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(NnError::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > T::zero()) || !self.epsilon.is_finite() {
            return Err(NnError::Config("adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates, allocated on the first step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        Self { step: 0, first: Vec::new(), second: Vec::new() }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: T,
    cfg: &AdamConfig<T>,
) -> Result<(), NnError> {
    if !grads.matches(params) {
        return Err(NnError::GradientShape);
    }
    if grads.tensors().any(|t| t.iter().any(|v| !v.is_finite())) {
        return Err(NnError::NonFinite("gradients"));
    }
    if state.step == 0 {
        state.first = grads.tensors().map(|t| vec![T::zero(); t.len()]).collect();
        state.second = state.first.clone();
    } else if state.first.len() != grads.layers.len() * 2 {
        return Err(NnError::GradientShape);
    }
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let c1 = T::one() - cfg.beta1.powi(t);
    let c2 = T::one() - cfg.beta2.powi(t);
    let tensors = params.tensors_mut().zip(grads.tensors()).zip(state.first.iter_mut().zip(state.second.iter_mut()));
    for ((p, g), (m, v)) in tensors {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (T::one() - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (T::one() - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
