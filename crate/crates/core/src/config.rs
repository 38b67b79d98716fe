//! Experiment configuration: one flat document, validated up front.
//!
//! Keys map one-to-one onto [`ExtractionConfig`] fields; unknown keys are an
//! error. Defaults live here and nowhere else.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ArchSpec;
use crate::temperature::LossScale;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot apply override `{0}`")]
    Override(String),
}

/// How the query set is drawn from the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Per-class quotas from class-name similarity to the target task.
    #[default]
    Language,
    /// Uniform over pool samples.
    Random,
}

/// How a support set is folded into a class prototype.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeMode {
    /// Unnormalized sum of support features.
    #[default]
    Sum,
    /// Mean of support features.
    Mean,
}

/// Where data and the victim come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated synthetic task, pool and trained victim.
    #[default]
    Fixture,
    /// Manifests on disk plus a victim model file or URL.
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionConfig {
    pub seed: u64,

    // Resolution.
    pub full_resolution: usize,
    pub reduced_resolution: usize,

    // Budget and query selection.
    pub query_budget: u64,
    /// Size of the query set; defaults to the whole budget.
    pub query_count: Option<u64>,
    pub selection_mode: SelectionMode,
    /// Text fed to the encoder for each class name; `{}` is the name.
    pub name_template: String,

    // Distillation.
    pub temperature: f64,
    pub loss_scale_mode: LossScale,

    // Two-stage training.
    pub varres: bool,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling per step; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub crop_area_min: f64,
    pub crop_area_max: f64,
    pub crop_aspect_min: f64,
    pub crop_aspect_max: f64,
    pub stage2_augment: bool,
    pub stage2_pad: usize,
    pub input_mean: [f32; 3],
    pub input_std: [f32; 3],
    pub surrogate_stem: usize,
    pub surrogate_widths: Vec<usize>,
    pub surrogate_blocks: usize,

    // Test-time alignment.
    pub ttda: bool,
    pub ttda_alpha: f64,
    pub support_size: usize,
    pub ttda_mode: PrototypeMode,
    pub ttda_normalize: bool,
    pub ttda_batch_size: usize,
    /// Stop updating after this many stream samples.
    pub ttda_freeze_after: Option<u64>,

    // Evaluation data.
    pub noise_sigma: f64,

    // Victim.
    /// Decimal places kept in victim responses; `None` is full precision.
    pub response_rounding: Option<u32>,
    pub victim_url: Option<String>,
    pub victim_model: Option<String>,

    // Data.
    pub data_source: DataSource,
    pub pool_manifest: Option<String>,
    pub test_manifest: Option<String>,
    pub target_classes: Vec<String>,
    pub embeddings_file: Option<String>,
    pub cache_dir: Option<String>,

    // Synthetic fixture.
    pub fixture_seed: u64,
    pub fixture_train_per_class: usize,
    pub fixture_test_per_class: usize,
    pub fixture_pool_per_class: usize,
    pub victim_epochs: usize,
    pub victim_stem: usize,
    pub victim_widths: Vec<usize>,
    pub victim_blocks: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            full_resolution: 32,
            reduced_resolution: 24,
            query_budget: 2000,
            query_count: None,
            selection_mode: SelectionMode::Language,
            name_template: "{}".into(),
            temperature: 100.0,
            loss_scale_mode: LossScale::TauSquared,
            varres: true,
            stage1_epochs: 24,
            stage2_epochs: 6,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            grad_clip: Some(20.0),
            crop_area_min: 0.35,
            crop_area_max: 1.0,
            crop_aspect_min: 3.0 / 4.0,
            crop_aspect_max: 4.0 / 3.0,
            stage2_augment: true,
            stage2_pad: 4,
            input_mean: [0.5, 0.5, 0.5],
            input_std: [0.25, 0.25, 0.25],
            surrogate_stem: 16,
            surrogate_widths: vec![32],
            surrogate_blocks: 1,
            ttda: true,
            ttda_alpha: 1.0,
            support_size: 16,
            ttda_mode: PrototypeMode::Sum,
            ttda_normalize: false,
            ttda_batch_size: 64,
            ttda_freeze_after: None,
            noise_sigma: 0.05,
            response_rounding: None,
            victim_url: None,
            victim_model: None,
            data_source: DataSource::Fixture,
            pool_manifest: None,
            test_manifest: None,
            target_classes: Vec::new(),
            embeddings_file: None,
            cache_dir: None,
            fixture_seed: 2024,
            fixture_train_per_class: 300,
            fixture_test_per_class: 200,
            fixture_pool_per_class: 150,
            victim_epochs: 12,
            victim_stem: 16,
            victim_widths: vec![32, 64],
            victim_blocks: 1,
        }
    }
}

impl ExtractionConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Reads `path` and applies `key=value` overrides (values in TOML syntax,
    /// bare words taken as strings) before validating.
    pub fn load_with_overrides(
        path: Option<&Path>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.display().to_string(),
                source,
            })?,
            None => String::new(),
        };
        let mut table: toml::Table = toml::from_str(&text)?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| ConfigError::Override(item.clone()))?;
            let key = key.trim().replace('-', "_");
            let raw = raw.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key, value);
        }
        let cfg: Self = toml::Value::Table(table).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Size of the query set.
    pub fn queries(&self) -> u64 {
        self.query_count.unwrap_or(self.query_budget)
    }

    /// Epochs at reduced resolution, after the varres switch.
    pub fn effective_stage1(&self) -> usize {
        if self.varres {
            self.stage1_epochs
        } else {
            0
        }
    }

    /// Epochs at full resolution; with varres off, stage-1 epochs move here so
    /// the total is unchanged.
    pub fn effective_stage2(&self) -> usize {
        if self.varres {
            self.stage2_epochs
        } else {
            self.stage1_epochs + self.stage2_epochs
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.stage1_epochs + self.stage2_epochs
    }

    pub fn surrogate_arch(&self, classes: usize) -> ArchSpec {
        ArchSpec {
            in_channels: 3,
            stem: self.surrogate_stem,
            widths: self.surrogate_widths.clone(),
            blocks: self.surrogate_blocks,
            classes,
        }
    }

    pub fn victim_arch(&self, classes: usize) -> ArchSpec {
        ArchSpec {
            in_channels: 3,
            stem: self.victim_stem,
            widths: self.victim_widths.clone(),
            blocks: self.victim_blocks,
            classes,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.reduced_resolution == 0 || self.reduced_resolution >= self.full_resolution {
            return fail(format!(
                "reduced_resolution ({}) must be in 1..full_resolution ({})",
                self.reduced_resolution, self.full_resolution
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.query_budget == 0 {
            return fail("query_budget must be positive".into());
        }
        if self.queries() == 0 || self.queries() > self.query_budget {
            return fail(format!(
                "query_count ({}) must be in 1..=query_budget ({})",
                self.queries(),
                self.query_budget
            ));
        }
        if self.support_size == 0 {
            return fail("support_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.ttda_alpha) {
            return fail(format!("ttda_alpha must be in [0, 1], got {}", self.ttda_alpha));
        }
        if self.batch_size == 0 || self.ttda_batch_size == 0 {
            return fail("batch sizes must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return fail("learning_rate must be positive and momentum in [0, 1)".into());
        }
        if matches!(self.grad_clip, Some(c) if c <= 0.0 || !c.is_finite()) {
            return fail("grad_clip must be positive".into());
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be non-negative".into());
        }
        if !(0.0 < self.crop_area_min && self.crop_area_min <= self.crop_area_max)
            || self.crop_area_max > 1.0
        {
            return fail("crop area range must satisfy 0 < min <= max <= 1".into());
        }
        if !(0.0 < self.crop_aspect_min && self.crop_aspect_min <= self.crop_aspect_max) {
            return fail("crop aspect range must satisfy 0 < min <= max".into());
        }
        if self.input_std.iter().any(|&s| !(s > 0.0)) {
            return fail("input_std entries must be positive".into());
        }
        if self.noise_sigma < 0.0 {
            return fail("noise_sigma must be non-negative".into());
        }
        if self.surrogate_widths.is_empty() || self.victim_widths.is_empty() {
            return fail("network widths must be non-empty".into());
        }
        if !self.name_template.contains("{}") {
            return fail("name_template must contain `{}`".into());
        }
        if self.data_source == DataSource::Files {
            if self.pool_manifest.is_none() || self.test_manifest.is_none() {
                return fail("files data source needs pool_manifest and test_manifest".into());
            }
            if self.victim_model.is_none() && self.victim_url.is_none() {
                return fail("files data source needs victim_model or victim_url".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ExtractionConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.reduced_resolution, 24);
        assert_eq!(cfg.ttda_alpha, 1.0);
        assert_eq!(cfg.queries(), cfg.query_budget);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExtractionConfig {
            query_count: Some(100),
            ..Default::default()
        };
        let back = ExtractionConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_invalid() {
        for text in [
            "reduced_resolution = 32",
            "temperature = 0.0",
            "query_budget = 0",
            "support_size = 0",
            "ttda_alpha = 1.5",
            "query_count = 5000",
            "no_such_key = 1",
        ] {
            assert!(ExtractionConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExtractionConfig::load_with_overrides(
            None,
            &[
                "temperature=1".into(),
                "selection_mode=random".into(),
                "varres=false".into(),
                "seed = 9".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.temperature, 1.0);
        assert_eq!(cfg.selection_mode, SelectionMode::Random);
        assert_eq!(cfg.effective_stage1(), 0);
        assert_eq!(cfg.effective_stage2(), cfg.total_epochs());
        assert_eq!(cfg.seed, 9);
        assert!(ExtractionConfig::load_with_overrides(None, &["oops".into()]).is_err());
    }
}
