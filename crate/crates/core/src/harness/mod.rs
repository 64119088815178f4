//! Experiment configuration, closed-loop trials, metrics and output files.

use std::path::Path;

use thiserror::Error;

use crate::controller::ControlError;
use crate::encoding::EncodingError;
use crate::gpr::GprError;
use crate::ilc::IlcError;
use crate::model::ModelError;
use crate::simulator::SimError;

pub mod config;
pub mod csv_log;
pub mod experiments;
pub mod report;
pub mod svg;
pub mod trial;
pub mod verify;

pub use config::{check_reachability, ExperimentConfig, GainProfile, SquatTask};
pub use trial::{compute_metrics, run_trial, Metrics, TickRecord, TrialFailure, TrialLog};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Simulation(Box<SimError>),
    #[error(transparent)]
    Control(Box<ControlError>),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Gpr(#[from] GprError),
    #[error(transparent)]
    Learning(#[from] IlcError),
    #[error("contact drift {drift:.3e} m at t = {time:.3} s exceeds the limit")]
    ContactDrift { time: f64, drift: f64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Model(_) => "model",
            HarnessError::Simulation(_) => "simulation",
            HarnessError::Control(_) => "control",
            HarnessError::Encoding(_) => "encoding",
            HarnessError::Gpr(_) => "gpr",
            HarnessError::Learning(_) => "learning",
            HarnessError::ContactDrift { .. } => "contact_drift",
            HarnessError::Io { .. } => "io",
            HarnessError::Format { .. } => "format",
        }
    }
}
