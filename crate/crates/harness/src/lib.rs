//! Experiment harness around the `dynconv` library: a synthetic shape
//! dataset, a four-stage toy classifier with pluggable SGDM / pure-dynamic
//! blocks, SGD training, finite-difference gradient checks, Gaussian-noise
//! robustness evaluation, and the ablation sweeps (razor ratio, spatial
//! kernel length, split ratio) with cost accounting.
//!
//! Everything is deterministic: a single ChaCha8 stream seeded from the CLI
//! seed drives dataset generation, then model initialization (in
//! `named_params` order), then the per-epoch shuffles, in that order.
//! Noise evaluation uses one fresh stream per σ derived from the same seed.

use std::fmt;
use std::path::PathBuf;

pub mod cli;
pub mod config;
pub mod dataset;
pub mod gradcheck;
pub mod model;
pub mod noise;
pub mod sweep;
pub mod train;

/// Harness-level failures; library errors pass through as `Lib`.
#[derive(Debug)]
pub enum HarnessError {
    Config { detail: String },
    Io { path: PathBuf, detail: String },
    /// Training aborted on a non-finite loss.
    Diverged { epoch: usize, loss: f64 },
    Lib(dynconv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub(crate) fn config(detail: impl Into<String>) -> Self {
        HarnessError::Config {
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, detail: impl fmt::Display) -> Self {
        HarnessError::Io {
            path: path.into(),
            detail: detail.to_string(),
        }
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Config { detail } => write!(f, "config error: {detail}"),
            HarnessError::Io { path, detail } => {
                write!(f, "io error at {}: {detail}", path.display())
            }
            HarnessError::Diverged { epoch, loss } => {
                write!(f, "training diverged at epoch {epoch}: loss {loss}")
            }
            HarnessError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<dynconv::Error> for HarnessError {
    fn from(e: dynconv::Error) -> Self {
        HarnessError::Lib(e)
    }
}
