//! Manifest files, clip preprocessing, per-dimension balancing, splitting
//! and transcript selection.

mod balance;
mod manifest;
mod preprocess;

pub use balance::{
    balance_dataset, balance_indices, select_text, split, split_by_case, split_indices,
};
pub use manifest::{load_manifest, write_manifest, ManifestWriteOptions};
pub use preprocess::{sample_frame_indices, window_clip, PreprocessSpec};

use std::path::PathBuf;

use thiserror::Error;

use crate::domain::{Dimension, TranscriptSource};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: labels object is missing key `{key}`")]
    MissingLabel { line: usize, key: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("onset {onset_s}s lies outside recording of {recording_len_s}s")]
    OnsetOutOfRange { onset_s: f64, recording_len_s: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension `{dimension}` has no {class} instances to balance against")]
    EmptyClass {
        dimension: Dimension,
        class: &'static str,
    },
    #[error("instance `{id}` has no {transcript} transcript")]
    MissingTranscript {
        id: String,
        transcript: TranscriptSource,
    },
}
