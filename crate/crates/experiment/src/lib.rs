//! Experiment harness: run configs, training runs with attack evaluation,
//! (β, α_target) sweeps and figure emission.

pub mod config;
pub mod error;
pub mod figures;
pub mod run;
pub mod sweep;

pub use config::{parse_config, parse_config_with_scale, RunConfig};
pub use error::ExperimentError;
pub use run::{run, run_with_data, RunRecord};
