use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the crate.
///
/// Variants are grouped by failure class so the command-line front end can
/// map them onto stable exit codes (validation vs runtime abort).
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("missing field: {0}")]
    MissingField(&'static str),

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("degenerate voxel {voxel}: zero response variance")]
    DegenerateVoxel { voxel: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient stimuli: need {needed}, have {available}")]
    InsufficientStimuli { needed: usize, available: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numeric overflow: non-finite activations in layer {layer}")]
    NumericOverflow { layer: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("legend error: {0}")]
    Legend(String),

    #[error("training aborted: {0}")]
    Aborted(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that happen while a run is in progress rather than
    /// while validating its inputs.
    pub fn is_runtime_abort(&self) -> bool {
        matches!(
            self,
            Error::Aborted(_) | Error::NumericOverflow { .. } | Error::Numeric(_) | Error::Io { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
