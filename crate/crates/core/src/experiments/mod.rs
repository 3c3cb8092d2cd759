//! Experiment harness: dataset generation, training of both pipelines,
//! scenario batches and report emission. The `softservo` binary is a thin
//! argument layer over these functions.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod scenario;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::neural::NeuralError;
use crate::servo::ServoError;

pub use config::{ExperimentConfig, Pipeline, PredictorKind};
pub use report::{ExperimentReport, GainSweepResult, REPORT_SCHEMA_VERSION};
pub use scenario::Scenario;

/// Exit code for configuration problems.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for missing or unreadable files.
pub const EXIT_IO: i32 = 3;
/// Exit code for diverged training.
pub const EXIT_DIVERGED: i32 = 4;
/// Exit code for anything else.
pub const EXIT_OTHER: i32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("missing checkpoint {0} (run `softservo train` first)")]
    MissingCheckpoint(PathBuf),
    #[error("{path}: report schema version {found}, expected {expected}")]
    Schema {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("config-diff audit failed: {0}")]
    Audit(String),
    #[error("{0}")]
    Format(String),
    #[error("{network}: {source}")]
    Training { network: String, source: NeuralError },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Servo(#[from] ServoError),
}

impl ExperimentError {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
        move |source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        use ExperimentError as E;
        match self {
            E::Config(_) | E::Audit(_) => EXIT_CONFIG,
            E::Io { .. } | E::MissingCheckpoint(_) | E::Schema { .. } => EXIT_IO,
            E::Dataset(
                DatasetError::Io { .. }
                | DatasetError::NotEmpty(_)
                | DatasetError::Parse { .. }
                | DatasetError::Json { .. }
                | DatasetError::Schema { .. },
            ) => EXIT_IO,
            E::Neural(NeuralError::Io(_)) => EXIT_IO,
            E::Training {
                source: NeuralError::Diverged { .. },
                ..
            }
            | E::Neural(NeuralError::Diverged { .. }) => EXIT_DIVERGED,
            _ => EXIT_OTHER,
        }
    }
}
