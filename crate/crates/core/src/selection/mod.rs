//! Query-set construction from a labeled candidate pool.
//!
//! Nothing here can reach a model: selection sees class names, an encoder and
//! image references only.

mod encoder;
mod plan;
mod pool;

use thiserror::Error;

pub use encoder::{embed_names, prompt, HashEncoder, PrecomputedEncoder, TextEncoder};
pub use plan::{
    allocate_quotas, build_plan, class_similarity, normalize_similarity, random_baseline_plan,
    select_queries, PlanEntry, QuerySet, SamplingPlan,
};
pub use pool::{ClassTaxonomy, OODPool, PoolClass};

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("no class names given")]
    NoNames,
    #[error("class name is empty")]
    EmptyName,
    #[error("duplicate class name `{0}`")]
    DuplicateName(String),
    #[error("class `{0}` has no samples")]
    EmptyClass(String),
    #[error("text encoder failed: {0}")]
    Encoder(String),
    #[error("embedding row {row} has zero norm")]
    ZeroNormEmbedding { row: usize },
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("requested {requested} queries but the pool holds {available}")]
    InfeasibleQuota { requested: usize, available: usize },
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("plan does not match pool: {0}")]
    PlanMismatch(String),
}
