//! Experiment orchestration: selection, response collection, two-stage
//! training, evaluation and test-time alignment, wired into budget-audited
//! runs that leave a versioned JSON report and CSV curves behind.

pub mod compare;
pub mod pipeline;
pub mod report;
pub mod task;

use std::path::PathBuf;

use clonekit::config::ConfigError;
use clonekit::data::DataError;
use clonekit::selection::SelectionError;
use clonekit::trainer::TrainError;
use clonekit::victim::VictimError;
use thiserror::Error;

pub use compare::{compare, mean, sample_std, CompareError, Comparison, ComparisonRow};
pub use pipeline::{align, extract, extract_with, plan, run, select, write_artifacts, Extraction};
pub use report::{AblationTags, BudgetAudit, ExperimentReport, TaskMeta, Timings, TtdaEval, TtdaSummary};
pub use task::{Task, VictimAccess};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Victim(#[from] VictimError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("task mismatch: {0}")]
    TaskMismatch(String),
}

impl RunError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> RunError {
        let path = path.into();
        move |source| RunError::Io { path, source }
    }
}
