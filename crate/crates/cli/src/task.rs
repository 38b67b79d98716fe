//! Where the target task, the pool and the victim come from.

use std::path::Path;
use std::sync::Arc;

use clonekit::config::{DataSource, ExtractionConfig};
use clonekit::data::fixture::{Fixture, Split};
use clonekit::data::{load_dataset, load_pool, LabeledDataset};
use clonekit::nn::Network;
use clonekit::rng::{make_rng_stream, Stream};
use clonekit::selection::{HashEncoder, OODPool, PrecomputedEncoder, TextEncoder};
use clonekit::trainer::train_classifier;
use clonekit::victim::{BlackBox, EvaluationOracle, VictimEndpoint, VictimModel};
use clonekit_service::HttpVictim;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::RunError;

/// Target-task test data and the candidate pool.
#[derive(Debug, Clone)]
pub struct Task {
    pub target_names: Vec<String>,
    pub test: LabeledDataset,
    pub pool: OODPool,
}

impl Task {
    pub fn load(config: &ExtractionConfig) -> Result<Self, RunError> {
        match config.data_source {
            DataSource::Fixture => {
                let fx = Fixture::new(config.fixture_seed, config.full_resolution);
                Ok(Self {
                    target_names: Fixture::target_names(),
                    test: fx.target_split(Split::Test, config.fixture_test_per_class),
                    pool: fx.pool(config.fixture_pool_per_class),
                })
            }
            DataSource::Files => {
                let test_path = config.test_manifest.as_deref().expect("validated");
                let pool_path = config.pool_manifest.as_deref().expect("validated");
                let test = load_dataset(Path::new(test_path))?;
                if test.resolution != config.full_resolution {
                    return Err(RunError::TaskMismatch(format!(
                        "test set is {}x{0}, config expects {}",
                        test.resolution, config.full_resolution
                    )));
                }
                let pool = load_pool(Path::new(pool_path), Some(config.full_resolution))?;
                let target_names = if config.target_classes.is_empty() {
                    test.class_names.clone()
                } else {
                    config.target_classes.clone()
                };
                if target_names.len() != test.class_count() {
                    return Err(RunError::TaskMismatch(format!(
                        "{} target class names for a {}-class test set",
                        target_names.len(),
                        test.class_count()
                    )));
                }
                Ok(Self {
                    target_names,
                    test,
                    pool,
                })
            }
        }
    }

    pub fn class_count(&self) -> usize {
        self.target_names.len()
    }
}

/// How the victim is reached.
#[derive(Debug, Clone)]
pub enum VictimAccess {
    /// A model file owned by the experimenter, served in-process.
    Local(Arc<VictimModel>),
    /// A remote service; no oracle is available.
    Remote(String),
}

impl VictimAccess {
    pub fn resolve(config: &ExtractionConfig) -> Result<Self, RunError> {
        if let Some(url) = &config.victim_url {
            return Ok(Self::Remote(url.clone()));
        }
        if let Some(path) = &config.victim_model {
            let model = VictimModel::load(Path::new(path)).map_err(RunError::io(path))?;
            return Ok(Self::Local(Arc::new(model)));
        }
        Ok(Self::Local(Arc::new(fixture_victim(config)?)))
    }

    /// A fresh metered handle. Local victims get a new ledger holding the
    /// configured budget.
    pub fn connect(&self, config: &ExtractionConfig) -> Box<dyn BlackBox> {
        match self {
            Self::Local(model) => Box::new(
                VictimEndpoint::new(model.clone(), config.query_budget)
                    .with_rounding(config.response_rounding),
            ),
            Self::Remote(url) => Box::new(HttpVictim::new(url)),
        }
    }

    pub fn oracle(&self) -> Option<EvaluationOracle> {
        match self {
            Self::Local(model) => Some(EvaluationOracle::new(model.clone())),
            Self::Remote(_) => None,
        }
    }

    pub fn model(&self) -> Option<&Arc<VictimModel>> {
        match self {
            Self::Local(model) => Some(model),
            Self::Remote(_) => None,
        }
    }
}

#[derive(Serialize)]
struct VictimKey<'a> {
    fixture_seed: u64,
    resolution: usize,
    train_per_class: usize,
    epochs: usize,
    stem: usize,
    widths: &'a [usize],
    blocks: usize,
    batch_size: usize,
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
    grad_clip: Option<f64>,
    pad: usize,
    mean: [f32; 3],
    std: [f32; 3],
}

/// Digest over every setting that shapes the fixture victim.
pub fn fixture_victim_key(config: &ExtractionConfig) -> String {
    let key = VictimKey {
        fixture_seed: config.fixture_seed,
        resolution: config.full_resolution,
        train_per_class: config.fixture_train_per_class,
        epochs: config.victim_epochs,
        stem: config.victim_stem,
        widths: &config.victim_widths,
        blocks: config.victim_blocks,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        momentum: config.momentum,
        weight_decay: config.weight_decay,
        grad_clip: config.grad_clip,
        pad: config.stage2_pad,
        mean: config.input_mean,
        std: config.input_std,
    };
    let json = serde_json::to_vec(&key).expect("key serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

/// Trains the fixture victim on the fixture's training split, or loads it
/// from `cache_dir` when an identical one was trained before.
pub fn fixture_victim(config: &ExtractionConfig) -> Result<VictimModel, RunError> {
    let cached = config
        .cache_dir
        .as_ref()
        .map(|d| Path::new(d).join(format!("victim-{}.json", fixture_victim_key(config))));
    if let Some(path) = cached.as_ref().filter(|p| p.exists()) {
        return VictimModel::load(path).map_err(RunError::io(path));
    }
    let fx = Fixture::new(config.fixture_seed, config.full_resolution);
    let train = fx.target_split(Split::Train, config.fixture_train_per_class);
    let net = Network::init(
        config.victim_arch(train.class_count()),
        &mut make_rng_stream(config.fixture_seed, Stream::Victim),
    );
    log::info!("training fixture victim on {} images", train.len());
    let (network, _) = train_classifier(
        net,
        train.images,
        &train.labels,
        config.victim_epochs,
        config,
        &mut make_rng_stream(config.fixture_seed, Stream::Shuffle),
    );
    let side = config.full_resolution;
    let model = VictimModel {
        network,
        input_shape: [3, side, side],
        mean: config.input_mean.to_vec(),
        std: config.input_std.to_vec(),
    };
    if let Some(path) = cached {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(RunError::io(dir))?;
        }
        model.save(&path).map_err(RunError::io(&path))?;
    }
    Ok(model)
}

/// Precomputed embeddings when configured, the hashing encoder otherwise.
pub fn encoder(config: &ExtractionConfig) -> Result<Box<dyn TextEncoder>, RunError> {
    Ok(match &config.embeddings_file {
        Some(path) => Box::new(PrecomputedEncoder::load(Path::new(path))?),
        None => Box::new(HashEncoder::default()),
    })
}
