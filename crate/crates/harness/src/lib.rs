//! Experiment harness for pruning-aware SPSA training of feedback recurrent
//! autoencoders: file formats, configuration, the two-arm protocol, sweeps
//! and plot data.

pub mod config;
pub mod format;
mod named;
pub mod plot;
pub mod protocol;
pub mod sweep;

pub use frae_prune_core as core;

pub use config::ExperimentConfig;
pub use protocol::{Arm, Experiment, ResultRecord};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] frae_prune_core::Error),
    #[error(transparent)]
    Format(#[from] format::FormatError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Plot(#[from] plot::PlotError),
}
