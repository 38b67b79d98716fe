//! Response collection and two-stage distillation.

mod augment;
mod cache;
mod eval;
mod train;

use thiserror::Error;

pub use augment::{standard_augment, varres_transform, CropParams};
pub use cache::{collect_responses, ResponseCache, COLLECT_BATCH};
pub use eval::{evaluate, predict, EvalResult};
pub use train::{
    train_classifier, train_stage1, train_stage2, DistillSet, EpochRecord, EvalHook, Stage,
    TrainReport, TrainState,
};

use crate::victim::VictimError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid resolution: crop to {target} from {source_side}")]
    InvalidResolution { target: usize, source_side: usize },
    #[error(transparent)]
    Victim(#[from] VictimError),
    #[error("cache mismatch: {0}")]
    CacheMismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse cache {path}: {reason}")]
    CorruptCache {
        path: std::path::PathBuf,
        reason: String,
    },
}
