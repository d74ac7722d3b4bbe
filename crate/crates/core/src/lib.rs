//! Spectral regularization of hidden-layer activations toward a target
//! power-law eigenspectrum, with the supporting linear algebra, networks,
//! adversarial attacks and dataset loaders.

pub mod attacks;
pub mod data;
pub mod linalg;
pub mod nn;
mod scalar;
pub mod spectral;

pub use scalar::Real;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type ModelParams64 = nn::ModelParams<f64>;
pub type ModelParams32 = nn::ModelParams<f32>;
pub type TrainConfig64 = nn::TrainConfig<f64>;
pub type SpectralLossConfig64 = spectral::SpectralLossConfig<f64>;
pub type History64 = nn::History<f64>;
