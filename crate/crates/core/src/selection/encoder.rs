use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::SelectionError;

/// Maps a piece of text to a fixed-length embedding.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f32>, SelectionError>;
}

/// Applies a `{}` prompt template to a class name.
pub fn prompt(template: &str, name: &str) -> String {
    template.replace("{}", name)
}

/// One embedding row per name, in order.
pub fn embed_names(
    names: &[String],
    encoder: &dyn TextEncoder,
) -> Result<Vec<Vec<f32>>, SelectionError> {
    if names.is_empty() {
        return Err(SelectionError::NoNames);
    }
    names
        .iter()
        .map(|n| {
            let v = encoder.encode(n)?;
            if v.len() != encoder.dim() {
                return Err(SelectionError::DimensionMismatch {
                    left: v.len(),
                    right: encoder.dim(),
                });
            }
            Ok(v)
        })
        .collect()
}

/// Deterministic offline encoder: hashes word and character-trigram features
/// into a signed bag and normalizes it. Names sharing words or word pieces
/// land close together, which is all the offline pipeline needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEncoder {
    dim: usize,
}

impl Default for HashEncoder {
    fn default() -> Self {
        Self { dim: 512 }
    }
}

impl HashEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        Self { dim }
    }

    fn add(&self, v: &mut [f32], feature: &str, weight: f32) {
        let h = Sha256::digest(feature.as_bytes());
        let idx = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % self.dim as u64;
        let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[idx as usize] += sign * weight;
    }
}

impl TextEncoder for HashEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f32>, SelectionError> {
        let mut v = vec![0.0f32; self.dim];
        let lower = text.to_lowercase();
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            self.add(&mut v, &format!("w:{word}"), 1.0);
            let padded: Vec<char> = format!(" {word} ").chars().collect();
            for tri in padded.windows(3) {
                self.add(&mut v, &format!("t:{}", tri.iter().collect::<String>()), 0.5);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm == 0.0 {
            return Err(SelectionError::Encoder(format!("no features in `{text}`")));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

#[derive(Deserialize)]
struct EmbeddingFile {
    #[serde(default)]
    model: Option<String>,
    embeddings: HashMap<String, Vec<f32>>,
}

/// Embeddings computed ahead of time by an external model and stored as
/// `{"model": ..., "embeddings": {"<text>": [..], ...}}`.
#[derive(Debug, Clone)]
pub struct PrecomputedEncoder {
    model: Option<String>,
    dim: usize,
    table: HashMap<String, Vec<f32>>,
}

impl PrecomputedEncoder {
    pub fn from_json(text: &str) -> Result<Self, SelectionError> {
        let file: EmbeddingFile =
            serde_json::from_str(text).map_err(|e| SelectionError::Encoder(e.to_string()))?;
        let dim = file
            .embeddings
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| SelectionError::Encoder("embedding file is empty".into()))?;
        if let Some(bad) = file.embeddings.values().find(|v| v.len() != dim) {
            return Err(SelectionError::DimensionMismatch {
                left: bad.len(),
                right: dim,
            });
        }
        Ok(Self {
            model: file.model,
            dim,
            table: file.embeddings,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SelectionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SelectionError::Encoder(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn model(&self) -> Option<&str> {
        self.model.as_deref()
    }
}

impl TextEncoder for PrecomputedEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f32>, SelectionError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| SelectionError::Encoder(format!("no embedding for `{text}`")))
    }
}
