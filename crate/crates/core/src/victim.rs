//! The black-box victim.
//!
//! [`VictimEndpoint`] is the only handle an attack receives: it answers
//! probability vectors, charges one budget unit per image, and has no way to
//! reach logits or parameters. Experimenters who own the model can build an
//! unmetered [`EvaluationOracle`] from the [`VictimModel`] itself.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::ledger::{BudgetExhausted, LedgerSnapshot, QueryLedger};
use crate::nn::{Act, Network};
use crate::prob::{ProbError, ProbabilityVector};
use crate::temperature::probabilities;

/// Images per forward pass inside the victim.
const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VictimError {
    #[error(transparent)]
    BudgetExhausted(#[from] BudgetExhausted),
    #[error("image {index} has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: [usize; 3],
        actual: [usize; 3],
    },
    #[error("malformed victim response: {0}")]
    InvalidResponse(#[from] ProbError),
    #[error("victim transport failure: {0}")]
    Transport(String),
}

/// What a caller may learn about the victim without paying.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VictimMeta {
    pub class_count: usize,
    pub input_shape: [usize; 3],
    pub budget: u64,
    pub remaining: u64,
}

/// Probability-only, budget-metered classifier access.
pub trait BlackBox: Send + Sync {
    fn meta(&self) -> Result<VictimMeta, VictimError>;

    /// One probability vector per image. Charges `batch.len()` units or
    /// nothing at all.
    fn query(&self, batch: &[Image]) -> Result<Vec<ProbabilityVector>, VictimError>;

    fn remaining_budget(&self) -> Result<u64, VictimError> {
        Ok(self.meta()?.remaining)
    }
}

/// A trained classifier plus the input convention it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimModel {
    pub network: Network,
    pub input_shape: [usize; 3],
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl VictimModel {
    pub fn class_count(&self) -> usize {
        self.network.classes()
    }

    fn logits(&self, images: &[&Image]) -> Vec<f32> {
        let mut out = Vec::with_capacity(images.len() * self.class_count());
        for chunk in images.chunks(INFERENCE_CHUNK) {
            let x = Act::from_images(chunk, &self.mean, &self.std);
            out.extend(self.network.logits(&x));
        }
        out
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        let json = serde_json::to_vec(self).map_err(std::io::Error::other)?;
        std::fs::write(path, json)
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(std::io::Error::other)
    }
}

/// In-process metered endpoint.
#[derive(Debug)]
pub struct VictimEndpoint {
    model: Arc<VictimModel>,
    ledger: QueryLedger,
    rounding: Option<u32>,
}

impl VictimEndpoint {
    pub fn new(model: Arc<VictimModel>, budget: u64) -> Self {
        Self {
            model,
            ledger: QueryLedger::new(budget),
            rounding: None,
        }
    }

    /// Round every returned probability to `places` decimals, then rescale
    /// the vector back onto the simplex.
    pub fn with_rounding(mut self, places: Option<u32>) -> Self {
        self.rounding = places;
        self
    }

    pub fn ledger(&self) -> LedgerSnapshot {
        self.ledger.snapshot()
    }

    pub fn class_count(&self) -> usize {
        self.model.class_count()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.model.input_shape
    }

    fn check_shapes(&self, batch: &[Image]) -> Result<(), VictimError> {
        let expected = self.model.input_shape;
        match batch.iter().position(|img| img.shape() != expected) {
            Some(index) => Err(VictimError::ShapeMismatch {
                index,
                expected,
                actual: batch[index].shape(),
            }),
            None => Ok(()),
        }
    }

    fn respond(&self, logits: &[f32]) -> ProbabilityVector {
        let p = probabilities(logits);
        match self.rounding {
            None => p,
            Some(places) => round_response(&p, places),
        }
    }
}

fn round_response(p: &ProbabilityVector, places: u32) -> ProbabilityVector {
    let scale = 10f64.powi(places as i32);
    let rounded: Vec<f64> = p.values().iter().map(|v| (v * scale).round() / scale).collect();
    let sum: f64 = rounded.iter().sum();
    if sum <= 0.0 {
        return p.clone();
    }
    ProbabilityVector::from_response(rounded.iter().map(|v| v / sum).collect())
        .expect("rescaled rounding stays on the simplex")
}

impl BlackBox for VictimEndpoint {
    fn meta(&self) -> Result<VictimMeta, VictimError> {
        Ok(VictimMeta {
            class_count: self.class_count(),
            input_shape: self.input_shape(),
            budget: self.ledger.budget(),
            remaining: self.ledger.remaining(),
        })
    }

    fn query(&self, batch: &[Image]) -> Result<Vec<ProbabilityVector>, VictimError> {
        self.check_shapes(batch)?;
        self.ledger.try_spend(batch.len() as u64)?;
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let refs: Vec<&Image> = batch.iter().collect();
        let logits = self.model.logits(&refs);
        Ok(logits
            .chunks(self.class_count())
            .map(|z| self.respond(z))
            .collect())
    }

    fn remaining_budget(&self) -> Result<u64, VictimError> {
        Ok(self.ledger.remaining())
    }
}

/// Unmetered label oracle for measuring agreement. Never handed to an attack.
#[derive(Debug, Clone)]
pub struct EvaluationOracle {
    model: Arc<VictimModel>,
}

impl EvaluationOracle {
    pub fn new(model: Arc<VictimModel>) -> Self {
        Self { model }
    }

    pub fn predict(&self, images: &[&Image]) -> Vec<usize> {
        let c = self.model.class_count();
        self.model
            .logits(images)
            .chunks(c)
            .map(crate::prob::argmax)
            .collect()
    }
}
