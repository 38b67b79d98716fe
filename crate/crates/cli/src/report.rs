//! The experiment report: one JSON document per run.

use std::path::{Path, PathBuf};

use clonekit::config::{ExtractionConfig, SelectionMode};
use clonekit::selection::SamplingPlan;
use clonekit::trainer::EpochRecord;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::RunError;

pub const SCHEMA_VERSION: u32 = 1;

/// The settings every ablation toggles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTags {
    pub varres: bool,
    pub temperature: f64,
    pub selection_mode: SelectionMode,
    pub ttda: bool,
}

impl AblationTags {
    pub fn from_config(c: &ExtractionConfig) -> Self {
        Self {
            varres: c.varres,
            temperature: c.temperature,
            selection_mode: c.selection_mode,
            ttda: c.ttda,
        }
    }

    /// Short method label, e.g. `varres/t100/language/ttda`.
    pub fn method(&self) -> String {
        let mode = match self.selection_mode {
            SelectionMode::Language => "language",
            SelectionMode::Random => "random",
        };
        format!(
            "{}/t{}/{}/{}",
            if self.varres { "varres" } else { "fullres" },
            self.temperature,
            mode,
            if self.ttda { "ttda" } else { "no-ttda" }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub class_names: Vec<String>,
    pub test_count: usize,
    pub test_digest: String,
    pub pool_digest: String,
}

/// Budget figures as reported by the victim's ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct BudgetAudit {
    pub budget: u64,
    /// Size of the query set.
    pub queries: u64,
    /// Units spent by this run, from the ledger before and after.
    pub spent: u64,
    /// Units spent between the end of collection and the end of the run.
    pub spent_after_collection: u64,
    pub remaining: u64,
    /// Responses came from an on-disk cache; nothing was spent for them.
    pub cache_hit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Timings {
    pub selection_seconds: f64,
    pub collection_seconds: f64,
    pub stage1_epoch_seconds: Option<f64>,
    pub stage2_epoch_seconds: Option<f64>,
    /// Sum of epoch wall-clock times.
    pub train_seconds: f64,
    pub total_seconds: f64,
}

/// Test-time alignment on one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtdaEval {
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub plain_seconds: f64,
    pub overhead_seconds: f64,
    /// `overhead_seconds / plain_seconds`.
    pub latency_overhead: f64,
    pub extractor_unchanged: bool,
    pub support_digest: String,
}

impl TtdaEval {
    pub fn delta(&self) -> f64 {
        self.accuracy_after - self.accuracy_before
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtdaSummary {
    pub clean: TtdaEval,
    pub noisy: TtdaEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    /// False when the run aborted or an invariant failed; `error` says why.
    pub valid: bool,
    pub error: Option<String>,
    pub seed: u64,
    pub config: ExtractionConfig,
    /// Digest of the config with the seed zeroed, so seeds of one setting
    /// share it.
    pub config_digest: String,
    pub tags: AblationTags,
    pub method: String,
    pub task: TaskMeta,
    pub budget: BudgetAudit,
    pub plan: Option<SamplingPlan>,
    pub query_digest: Option<String>,
    pub cache_digest: Option<String>,
    pub timings: Timings,
    pub epochs: Vec<EpochRecord>,
    pub accuracy: Option<f64>,
    pub agreement: Option<f64>,
    /// Test accuracy of the victim itself, when an oracle is available.
    pub victim_accuracy: Option<f64>,
    pub noisy_accuracy: Option<f64>,
    pub ttda: Option<TtdaSummary>,
}

pub fn config_digest(config: &ExtractionConfig) -> String {
    let mut c = config.clone();
    c.seed = 0;
    hex::encode(Sha256::digest(c.to_toml_string().as_bytes()))
}

impl ExperimentReport {
    pub fn new(config: &ExtractionConfig, task: TaskMeta) -> Self {
        let tags = AblationTags::from_config(config);
        Self {
            schema_version: SCHEMA_VERSION,
            valid: false,
            error: None,
            seed: config.seed,
            config: config.clone(),
            config_digest: config_digest(config),
            method: tags.method(),
            tags,
            task,
            budget: BudgetAudit {
                budget: config.query_budget,
                queries: config.queries(),
                ..Default::default()
            },
            plan: None,
            query_digest: None,
            cache_digest: None,
            timings: Timings::default(),
            epochs: Vec::new(),
            accuracy: None,
            agreement: None,
            victim_accuracy: None,
            noisy_accuracy: None,
            ttda: None,
        }
    }

    /// Marks the report invalid, keeping the first reason.
    pub fn invalidate(&mut self, reason: impl Into<String>) {
        self.valid = false;
        self.error.get_or_insert(reason.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        std::fs::write(path, self.to_json()).map_err(RunError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(RunError::io(path))?;
        serde_json::from_str(&text).map_err(|e| RunError::Io {
            path: PathBuf::from(path),
            source: std::io::Error::other(e),
        })
    }

    /// First epoch whose test accuracy reaches `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.epochs
            .iter()
            .find(|e| e.accuracy.is_some_and(|a| a >= target))
            .map(|e| e.epoch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> TaskMeta {
        TaskMeta {
            class_names: vec!["a".into(), "b".into()],
            test_count: 4,
            test_digest: "t".into(),
            pool_digest: "p".into(),
        }
    }

    #[test]
    fn config_digest_ignores_seed_only() {
        let a = ExtractionConfig::default();
        let b = ExtractionConfig { seed: 7, ..a.clone() };
        let c = ExtractionConfig {
            temperature: 1.0,
            ..a.clone()
        };
        assert_eq!(config_digest(&a), config_digest(&b));
        assert_ne!(config_digest(&a), config_digest(&c));
    }

    #[test]
    fn json_round_trip() {
        let mut r = ExperimentReport::new(&ExtractionConfig::default(), meta());
        r.accuracy = Some(0.8125);
        r.invalidate("first");
        r.invalidate("second");
        let back: ExperimentReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.error.as_deref(), Some("first"));
        assert_eq!(back.method, "varres/t100/language/ttda");
    }
}
