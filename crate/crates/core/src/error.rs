use std::path::PathBuf;

use thiserror::Error;

use crate::experiments::Exclusion;
use crate::train::TrainReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Array shapes disagree with the architecture or with each other.
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("need at least {needed} usable points for a slope fit, have {usable} ({})", describe_exclusions(.excluded))]
    InsufficientPoints {
        needed: usize,
        usable: usize,
        excluded: Vec<Exclusion>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training aborted at iteration {iteration}: {reason}")]
    TrainingAborted {
        iteration: usize,
        reason: String,
        report: Box<TrainReport>,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            what,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics (as opposed to bad input or config).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::TrainingAborted { .. } | Error::InsufficientPoints { .. }
        )
    }
}

fn describe_exclusions(excluded: &[Exclusion]) -> String {
    if excluded.is_empty() {
        return "no exclusions".to_string();
    }
    let parts: Vec<String> = excluded
        .iter()
        .map(|e| format!("n={} {}", e.n, e.reason))
        .collect();
    format!("excluded: {}", parts.join(", "))
}
