//! Probability and logit vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the simplex checks (sum and range).
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("probability vector is empty")]
    Empty,
    #[error("entry {index} is not finite")]
    NonFinite { index: usize },
    #[error("entry {index} = {value} lies outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("entries sum to {sum}, expected 1 within {SIMPLEX_TOLERANCE}")]
    BadSum { sum: f64 },
    #[error("expected {expected} classes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates without touching the values.
    pub fn new(values: Vec<f64>) -> Result<Self, ProbError> {
        check_simplex(&values)?;
        Ok(Self(values))
    }

    /// Like [`ProbabilityVector::new`] but also pins the class count.
    pub fn with_classes(values: Vec<f64>, classes: usize) -> Result<Self, ProbError> {
        if values.len() != classes {
            return Err(ProbError::LengthMismatch {
                expected: classes,
                actual: values.len(),
            });
        }
        Self::new(values)
    }

    /// Accepts a response that passes the simplex checks and divides out the
    /// residual sum error. Anything outside tolerance is rejected.
    pub fn from_response(values: Vec<f64>) -> Result<Self, ProbError> {
        let sum = check_simplex(&values)?;
        Ok(Self(values.into_iter().map(|v| v / sum).collect()))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0 / classes as f64; classes])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the first maximal entry.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum::<f64>()
            .max(0.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = ProbError;
    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Self {
        p.0
    }
}

fn check_simplex(values: &[f64]) -> Result<f64, ProbError> {
    if values.is_empty() {
        return Err(ProbError::Empty);
    }
    let mut sum = 0.0;
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(ProbError::NonFinite { index });
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(ProbError::OutOfRange { index, value });
        }
        sum += value;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(ProbError::BadSum { sum });
    }
    Ok(sum)
}

/// Unnormalized class scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ProbError> {
        if values.is_empty() {
            return Err(ProbError::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(ProbError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = ProbError;
    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<LogitVector> for Vec<f64> {
    fn from(z: LogitVector) -> Self {
        z.0
    }
}

pub(crate) fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
