//! Experiment configuration, the grid driver, result files, reports and
//! checkpoints.

pub mod checkpoint;
pub mod config;
pub mod grid;
pub mod report;
pub mod results;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_into, save_checkpoint, CheckpointError, CheckpointMeta,
};
pub use config::{DataSource, ExperimentConfig, ModelSpec};
pub use grid::{enumerate_cells, run_grid, run_grid_with, train_cell, Execution, GridOutcome};
pub use report::{render_report, ReportFormat};
pub use results::{
    compute_aggregate, pooled_mcnemar, read_results, Aggregate, AggregateEntry, CellKey,
    CellPredictions, OracleRow, ResultRow,
};

use std::path::Path;

use thiserror::Error;

use crate::datagen::DataGenError;
use crate::eval::EvalError;
use crate::ingest::IngestError;
use crate::strategies::StrategyError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path} line {line}: {message}")]
    Results {
        path: String,
        line: usize,
        message: String,
    },
    #[error("output directory was produced by a different configuration (hash {found:016x}, expected {expected:016x})")]
    ResumeMismatch { found: u64, expected: u64 },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    DataGen(#[from] DataGenError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl HarnessError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}
