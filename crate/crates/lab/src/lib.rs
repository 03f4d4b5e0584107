//! Experiment runner: configuration, cached spectra, resumable variational
//! ensembles and CSV analysis outputs.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod presets;

pub use config::ExperimentConfig;
pub use error::{LabError, LabResult};
