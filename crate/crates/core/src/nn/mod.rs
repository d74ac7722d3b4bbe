//! Small feedforward networks (dense and valid 2-D convolution layers with
//! tanh), softmax cross-entropy, reverse-mode gradients, Adam and the training
//! loop with spectral-loss injection at hidden activations.

mod adam;
pub mod checkpoint;
mod conv;
mod loss;
mod model;
mod train;

use thiserror::Error;

use crate::linalg::LinalgError;
use crate::spectral::SpectralError;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{log_softmax_row, softmax_cross_entropy, CrossEntropy};
pub use model::{
    argmax, evaluate, forward, input_gradient, input_gradient_with_losses, loss_and_grads, predict, Activation,
    ForwardTrace, Gradients, Layer, LayerGrads, LayerKind, LayerSelection, LayerSpec, LossAndGrads, ModelParams,
};
pub use train::{train, EpochStats, History, TrainConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("batch rows have {got} values, model input expects {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("{images} images but {labels} labels")]
    LabelCount { images: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("gradients do not match the parameter layout")]
    GradientShape,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("epoch {epoch}, batch {batch}: {source}")]
    AtBatch { epoch: usize, batch: usize, source: Box<NnError> },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}
