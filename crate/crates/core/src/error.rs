//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    Dimension {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("sample {row} is isolated: its similarity row has no off-diagonal mass")]
    IsolatedSample { row: usize },

    #[error("expected a {expected} similarity network, got {got}")]
    NetworkKind { expected: String, got: String },

    #[error("sample count mismatch: {left_name} has {left_n} samples, {right_name} has {right_n}")]
    SampleCount {
        left_name: String,
        left_n: usize,
        right_name: String,
        right_n: usize,
    },

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}): {detail}")]
    Divergence {
        epoch: usize,
        learning_rate: f64,
        detail: String,
    },

    #[error(
        "modality '{modality}' is low-information and its mutual information with the strong \
         modality ({mi:.4}) does not exceed the gate threshold ({threshold}); skip distillation \
         for it"
    )]
    MiGateRefused {
        modality: String,
        mi: f64,
        threshold: f64,
    },

    #[error("relative performance ratio is undefined for modality {modality}: all other modalities have zero macro F1")]
    SingularRatio { modality: usize },

    #[error("overfitting-to-generalization ratio undefined: validation loss plateaued between the compared epochs")]
    OgrPlateau,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-numeric cell in {file} at row {row}, column {col}: '{value}'")]
    BadCell {
        file: String,
        row: usize,
        col: usize,
        value: String,
    },

    #[error("missing prerequisite artifact {path}: run `{produced_by}` first")]
    MissingArtifact { path: PathBuf, produced_by: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code for the CLI: configuration and usage problems exit
    /// with 1, runtime failures with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MissingArtifact { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
