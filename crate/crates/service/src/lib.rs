//! Wire protocol for the victim.
//!
//! `POST /v1/query` takes `{"images": [[..]], "shape": [C, H, W]}` with each
//! image as a flat row-major (channel, row, column) array and answers
//! `{"probs": [[..]], "remaining": n}`. Budget exhaustion is 402, malformed
//! shapes are 400. `GET /v1/meta` reports class count, input shape and budget.

mod client;
mod server;

pub use client::HttpVictim;
pub use server::{router, serve, spawn_background, RunningServer};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub images: Vec<Vec<f32>>,
    pub shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub probs: Vec<Vec<f64>>,
    pub remaining: u64,
}

/// Error body for every non-2xx answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ErrorBody {
    BudgetExhausted {
        requested: u64,
        remaining: u64,
        budget: u64,
    },
    ShapeMismatch {
        index: usize,
        expected: [usize; 3],
        actual: [usize; 3],
    },
    BadRequest {
        message: String,
    },
    Internal {
        message: String,
    },
}
