//! Test-time alignment of the classification head.
//!
//! Each class keeps the `k` lowest-entropy stream features the surrogate
//! assigned to it. After every batch the class prototypes (head rows) are
//! pulled toward those features. The feature extractor and the biases are
//! never touched.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExtractionConfig, PrototypeMode};
use crate::image::Image;
use crate::nn::{Act, Network};
use crate::prob::ProbabilityVector;
use crate::temperature::probabilities;

/// Shannon entropy in nats.
pub fn prediction_entropy(p: &ProbabilityVector) -> f64 {
    p.entropy()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    /// Position of the sample in the stream.
    pub index: u64,
    pub entropy: f64,
    pub feature: Vec<f32>,
}

/// The `k` lowest-entropy samples predicted as one class, sorted by entropy.
/// Among equal entropies the earlier sample wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub class: usize,
    pub k: usize,
    entries: Vec<SupportEntry>,
}

impl SupportSet {
    pub fn new(class: usize, k: usize) -> Self {
        assert!(k >= 1, "support size must be positive");
        Self {
            class,
            k,
            entries: Vec::with_capacity(k),
        }
    }

    pub fn entries(&self) -> &[SupportEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_entropy(&self) -> Option<f64> {
        self.entries.last().map(|e| e.entropy)
    }

    /// Offers a sample; returns whether it was kept.
    pub fn offer(&mut self, index: u64, entropy: f64, feature: &[f32]) -> bool {
        if self.entries.len() == self.k && entropy >= self.entries[self.k - 1].entropy {
            return false;
        }
        let at = self.entries.partition_point(|e| e.entropy <= entropy);
        self.entries.insert(
            at,
            SupportEntry {
                index,
                entropy,
                feature: feature.to_vec(),
            },
        );
        self.entries.truncate(self.k);
        true
    }

    /// Stream indices of the current members, in entropy order.
    pub fn indices(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.index).collect()
    }

    /// Sum (or mean) of the member features. `None` when empty.
    pub fn aggregate(&self, mode: PrototypeMode) -> Option<Vec<f32>> {
        let first = self.entries.first()?;
        let mut acc = vec![0.0f32; first.feature.len()];
        for e in &self.entries {
            for (a, &f) in acc.iter_mut().zip(&e.feature) {
                *a += f;
            }
        }
        if mode == PrototypeMode::Mean {
            let n = self.entries.len() as f32;
            acc.iter_mut().for_each(|a| *a /= n);
        }
        Some(acc)
    }
}

/// `w <- (1 - alpha) * w + alpha * aggregate(S)`, optionally rescaled to unit
/// norm. Empty supports leave `w` alone.
pub fn update_prototype(
    w: &mut [f32],
    support: &SupportSet,
    alpha: f64,
    mode: PrototypeMode,
    normalize: bool,
) -> bool {
    let Some(agg) = support.aggregate(mode) else {
        return false;
    };
    assert_eq!(agg.len(), w.len(), "feature and prototype dimension");
    let a = alpha as f32;
    for (wi, &s) in w.iter_mut().zip(&agg) {
        *wi = (1.0 - a) * *wi + a * s;
    }
    if normalize {
        let n = norm(w);
        if n > 0.0 {
            w.iter_mut().for_each(|x| *x /= n);
        }
    }
    true
}

fn norm(v: &[f32]) -> f32 {
    v.iter().map(|x| x * x).sum::<f32>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub alpha: f64,
    pub support_size: usize,
    pub mode: PrototypeMode,
    /// Rescale each updated prototype to unit norm.
    pub normalize: bool,
    pub batch_size: usize,
    /// No support or prototype changes after this many samples.
    pub freeze_after: Option<u64>,
}

impl AdaptConfig {
    pub fn from_config(c: &ExtractionConfig) -> Self {
        Self {
            alpha: c.ttda_alpha,
            support_size: c.support_size,
            mode: c.ttda_mode,
            normalize: c.ttda_normalize,
            batch_size: c.ttda_batch_size,
            freeze_after: c.ttda_freeze_after,
        }
    }
}

/// One row of the adaptation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptLogRow {
    pub index: u64,
    pub predicted: usize,
    pub entropy: f64,
    /// Classes whose prototypes were updated right after this sample.
    pub updated: Vec<usize>,
}

/// Online state: one support set per class.
#[derive(Debug, Clone)]
pub struct Adapter {
    pub config: AdaptConfig,
    supports: Vec<SupportSet>,
    seen: u64,
}

impl Adapter {
    pub fn new(classes: usize, config: AdaptConfig) -> Self {
        Self {
            supports: (0..classes)
                .map(|c| SupportSet::new(c, config.support_size))
                .collect(),
            config,
            seen: 0,
        }
    }

    pub fn supports(&self) -> &[SupportSet] {
        &self.supports
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    fn frozen(&self) -> bool {
        matches!(self.config.freeze_after, Some(n) if self.seen >= n)
    }

    /// Records one sample already scored by the current head and returns
    /// its prediction. Only the predicted class's support can change.
    pub fn observe(&mut self, feature: &[f32], probs: &ProbabilityVector) -> (usize, f64) {
        let predicted = probs.argmax();
        let entropy = prediction_entropy(probs);
        if !self.frozen() {
            self.supports[predicted].offer(self.seen, entropy, feature);
        }
        self.seen += 1;
        (predicted, entropy)
    }

    /// Applies the prototype update for every class with a non-empty support.
    pub fn update_head(&self, net: &mut Network) -> Vec<usize> {
        let head = net.head_mut();
        let mut updated = Vec::new();
        for s in &self.supports {
            let w = head.prototype_mut(s.class);
            if update_prototype(w, s, self.config.alpha, self.config.mode, self.config.normalize) {
                updated.push(s.class);
            }
        }
        updated
    }

    /// Digest over every support set's member indices.
    pub fn support_digest(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.supports {
            h.update((s.class as u64).to_le_bytes());
            for i in s.indices() {
                h.update(i.to_le_bytes());
            }
            h.update([0xff]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub predictions: Vec<usize>,
    pub log: Vec<AdaptLogRow>,
    pub adapter: Adapter,
    /// Wall-clock seconds spent on support bookkeeping and head updates,
    /// excluding the forward passes a plain inference run also pays for.
    pub overhead_seconds: f64,
    pub total_seconds: f64,
}

/// Runs the stream in order. Each batch is scored with the head as it stood
/// before the batch; the head is updated after the batch.
pub fn adapt_stream(
    net: &mut Network,
    stream: &[&Image],
    config: &AdaptConfig,
    mean: &[f32],
    std: &[f32],
) -> AdaptOutcome {
    let start = Instant::now();
    let mut adapter = Adapter::new(net.classes(), *config);
    let mut predictions = Vec::with_capacity(stream.len());
    let mut log = Vec::with_capacity(stream.len());
    let mut overhead = 0.0;
    let dim = net.feature_dim();
    let classes = net.classes();
    for batch in stream.chunks(config.batch_size.max(1)) {
        let (feats, logits) = net.forward(&Act::from_images(batch, mean, std));
        let t = Instant::now();
        let was_frozen = adapter.frozen();
        for (f, z) in feats.chunks(dim).zip(logits.chunks(classes)) {
            let index = adapter.seen();
            let (predicted, entropy) = adapter.observe(f, &probabilities(z));
            predictions.push(predicted);
            log.push(AdaptLogRow {
                index,
                predicted,
                entropy,
                updated: Vec::new(),
            });
        }
        if !was_frozen {
            let updated = adapter.update_head(net);
            if let Some(last) = log.last_mut() {
                last.updated = updated;
            }
        }
        overhead += t.elapsed().as_secs_f64();
    }
    AdaptOutcome {
        predictions,
        log,
        adapter,
        overhead_seconds: overhead,
        total_seconds: start.elapsed().as_secs_f64(),
    }
}

/// Writes the adaptation log as CSV; updated classes are `;`-separated.
pub fn write_adapt_log(rows: &[AdaptLogRow], path: &Path) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::other)?;
    w.write_record(["index", "predicted", "entropy", "updated"])
        .map_err(std::io::Error::other)?;
    for r in rows {
        let updated: Vec<String> = r.updated.iter().map(|c| c.to_string()).collect();
        w.write_record([
            r.index.to_string(),
            r.predicted.to_string(),
            r.entropy.to_string(),
            updated.join(";"),
        ])
        .map_err(std::io::Error::other)?;
    }
    w.flush()
}

/// Offline recomputation: for each class, the `k` smallest `(entropy, index)`
/// pairs among samples predicted as that class.
pub fn brute_force_supports(
    predictions: &[usize],
    entropies: &[f64],
    classes: usize,
    k: usize,
) -> Vec<Vec<u64>> {
    (0..classes)
        .map(|c| {
            let mut members: Vec<(f64, u64)> = predictions
                .iter()
                .zip(entropies)
                .enumerate()
                .filter(|(_, (&p, _))| p == c)
                .map(|(i, (_, &e))| (e, i as u64))
                .collect();
            members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            members.into_iter().take(k).map(|(_, i)| i).collect()
        })
        .collect()
}
