use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::image::Image;
use crate::nn::{Act, Network};
use crate::victim::EvaluationOracle;

const EVAL_CHUNK: usize = 256;

/// Argmax class per image.
pub fn predict(net: &Network, images: &[&Image], mean: &[f32], std: &[f32]) -> Vec<usize> {
    let c = net.classes();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_CHUNK) {
        let logits = net.logits(&Act::from_images(chunk, mean, std));
        out.extend(logits.chunks(c).map(crate::prob::argmax));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    /// Fraction of samples where surrogate and victim predict the same class.
    pub agreement: Option<f64>,
}

/// Test accuracy, plus victim agreement when an unmetered oracle is given.
pub fn evaluate(
    net: &Network,
    test: &LabeledDataset,
    mean: &[f32],
    std: &[f32],
    oracle: Option<&EvaluationOracle>,
) -> EvalResult {
    let images = test.image_refs();
    let preds = predict(net, &images, mean, std);
    let n = preds.len().max(1) as f64;
    let correct = preds.iter().zip(&test.labels).filter(|(p, l)| p == l).count();
    let agreement = oracle.map(|o| {
        let victim = o.predict(&images);
        victim.iter().zip(&preds).filter(|(v, p)| v == p).count() as f64 / n
    });
    EvalResult {
        accuracy: correct as f64 / n,
        agreement,
    }
}
