use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::augment::{standard_augment, varres_transform, CropParams};
use super::{ResponseCache, TrainError};
use crate::config::ExtractionConfig;
use crate::image::Image;
use crate::nn::{cosine_lr, Act, Network, Sgd};
use crate::rng::Rng;
use crate::temperature::{distill_loss_grad, kl_from_log, log_softmax, soften_into, LossScale};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Reduced-resolution random crops.
    Stage1,
    /// Full resolution, light augmentation.
    Stage2,
    /// Label training, used for fixture victims.
    Supervised,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
            Stage::Supervised => "supervised",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub resolution: usize,
    /// Mean training objective, including any loss scaling.
    pub loss: f64,
    /// Mean unscaled KL between softened target and softened student.
    pub kl: f64,
    /// Mean KL between raw victim response and student softmax at temperature 1.
    pub fit_kl: f64,
    pub seconds: f64,
    pub accuracy: Option<f64>,
}

/// Cached responses joined with their images, with targets softened once.
#[derive(Debug, Clone)]
pub struct DistillSet {
    pub images: Vec<Image>,
    pub raw: Vec<Vec<f64>>,
    pub soft: Vec<Vec<f64>>,
    pub tau: f64,
}

impl DistillSet {
    pub fn new(images: Vec<Image>, cache: &ResponseCache, tau: f64) -> Result<Self, TrainError> {
        if images.len() != cache.len() {
            return Err(TrainError::CacheMismatch(format!(
                "{} images for {} cached responses",
                images.len(),
                cache.len()
            )));
        }
        let raw: Vec<Vec<f64>> = cache.responses.iter().map(|p| p.values().to_vec()).collect();
        Ok(Self::from_targets(images, raw, tau))
    }

    /// Hard labels as one-hot targets at temperature 1.
    pub fn labeled(images: Vec<Image>, labels: &[usize], classes: usize) -> Self {
        let raw = labels
            .iter()
            .map(|&l| {
                let mut v = vec![0.0; classes];
                v[l] = 1.0;
                v
            })
            .collect();
        Self::from_targets(images, raw, 1.0)
    }

    fn from_targets(images: Vec<Image>, raw: Vec<Vec<f64>>, tau: f64) -> Self {
        let soft = raw
            .iter()
            .map(|p| {
                let mut q = vec![0.0; p.len()];
                if tau == 1.0 {
                    q.copy_from_slice(p);
                } else {
                    soften_into(p, tau, &mut q);
                }
                q
            })
            .collect();
        Self {
            images,
            raw,
            soft,
            tau,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Called after every epoch with the current network; returns an accuracy.
/// Its run time is excluded from the epoch's seconds.
pub type EvalHook<'a> = &'a mut dyn FnMut(&Network) -> f64;

/// Network plus optimizer state carried across both stages, so the cosine
/// schedule spans the whole run.
pub struct TrainState {
    pub net: Network,
    opt: Sgd,
    step: usize,
    total_steps: usize,
    epochs_done: usize,
    base_lr: f64,
    grad_clip: Option<f64>,
    batch_size: usize,
    mean: Vec<f32>,
    std: Vec<f32>,
}

impl TrainState {
    pub fn new(net: Network, config: &ExtractionConfig, samples: usize, total_epochs: usize) -> Self {
        let per_epoch = samples.div_ceil(config.batch_size.max(1));
        let opt = Sgd::new(&net, config.momentum, config.weight_decay);
        Self {
            net,
            opt,
            step: 0,
            total_steps: per_epoch * total_epochs,
            epochs_done: 0,
            base_lr: config.learning_rate,
            grad_clip: config.grad_clip,
            batch_size: config.batch_size,
            mean: config.input_mean.to_vec(),
            std: config.input_std.to_vec(),
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }
}

fn run_epoch(
    state: &mut TrainState,
    data: &DistillSet,
    scale: LossScale,
    transform: &mut dyn FnMut(&Image, &mut Rng) -> Image,
    expect_side: Option<usize>,
    rng: &mut Rng,
) -> (f64, f64, f64, usize) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let classes = state.net.classes();
    let factor = scale.factor(data.tau);
    let (mut loss_sum, mut kl_sum, mut fit_sum) = (0.0, 0.0, 0.0);
    let mut side = 0;
    for batch in order.chunks(state.batch_size) {
        let images: Vec<Image> = batch.iter().map(|&i| transform(&data.images[i], rng)).collect();
        let refs: Vec<&Image> = images.iter().collect();
        let x = Act::from_images(&refs, &state.mean, &state.std);
        if let Some(s) = expect_side {
            assert!(x.h == s && x.w == s, "batch at {}x{}, expected {s}x{s}", x.h, x.w);
        }
        side = x.h;
        let (logits, tape) = state.net.forward_train(&x);
        let mut dlogits = vec![0.0f32; logits.len()];
        for ((&i, z), g) in batch
            .iter()
            .zip(logits.chunks(classes))
            .zip(dlogits.chunks_mut(classes))
        {
            let l = distill_loss_grad(&data.soft[i], z, data.tau, scale, g);
            loss_sum += l;
            kl_sum += l / factor;
            let z64: Vec<f64> = z.iter().map(|&v| v as f64).collect();
            fit_sum += kl_from_log(&data.raw[i], &log_softmax(&z64));
        }
        let grads = state.net.backward(tape, &dlogits);
        let lr = cosine_lr(state.base_lr, state.step, state.total_steps);
        let mut scale = 1.0 / batch.len() as f64;
        if let Some(clip) = state.grad_clip {
            let norm = grads
                .slices()
                .iter()
                .flat_map(|g| g.iter())
                .map(|&g| (g as f64).powi(2))
                .sum::<f64>()
                .sqrt()
                * scale;
            if norm > clip {
                scale *= clip / norm;
            }
        }
        state.opt.step(&mut state.net, &grads, lr, scale as f32);
        state.step += 1;
    }
    let n = data.len().max(1) as f64;
    (loss_sum / n, kl_sum / n, fit_sum / n, side)
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    state: &mut TrainState,
    data: &DistillSet,
    epochs: usize,
    stage: Stage,
    scale: LossScale,
    transform: &mut dyn FnMut(&Image, &mut Rng) -> Image,
    expect_side: Option<usize>,
    rng: &mut Rng,
    mut hook: Option<EvalHook>,
) -> Vec<EpochRecord> {
    let mut records = Vec::with_capacity(epochs);
    if data.is_empty() {
        return records;
    }
    for _ in 0..epochs {
        let start = Instant::now();
        let (loss, kl, fit_kl, resolution) =
            run_epoch(state, data, scale, transform, expect_side, rng);
        let seconds = start.elapsed().as_secs_f64();
        state.epochs_done += 1;
        let accuracy = hook.as_mut().map(|h| h(&state.net));
        log::debug!(
            "{} epoch {} loss {loss:.5} kl {kl:.3e} fit {fit_kl:.4} {seconds:.2}s",
            stage.as_str(),
            state.epochs_done
        );
        records.push(EpochRecord {
            epoch: state.epochs_done,
            stage,
            resolution,
            loss,
            kl,
            fit_kl,
            seconds,
            accuracy,
        });
    }
    records
}

fn crop_params(config: &ExtractionConfig) -> CropParams {
    CropParams {
        area: (config.crop_area_min, config.crop_area_max),
        aspect: (config.crop_aspect_min, config.crop_aspect_max),
    }
}

/// Stage 1: the surrogate sees random crops rescaled to the reduced
/// resolution, against targets from the original images.
pub fn train_stage1(
    state: &mut TrainState,
    data: &DistillSet,
    config: &ExtractionConfig,
    rng: &mut Rng,
    hook: Option<EvalHook>,
) -> Result<Vec<EpochRecord>, TrainError> {
    let r = config.reduced_resolution;
    if let Some(img) = data.images.first() {
        if r > img.height() || r == 0 {
            return Err(TrainError::InvalidResolution {
                target: r,
                source_side: img.height(),
            });
        }
    }
    let params = crop_params(config);
    let mut transform = |x: &Image, rng: &mut Rng| {
        varres_transform(x, r, &params, rng).expect("resolution checked above")
    };
    Ok(run_stage(
        state,
        data,
        config.effective_stage1(),
        Stage::Stage1,
        config.loss_scale_mode,
        &mut transform,
        Some(r),
        rng,
        hook,
    ))
}

/// Stage 2: full resolution with optional flip and padded shift.
pub fn train_stage2(
    state: &mut TrainState,
    data: &DistillSet,
    config: &ExtractionConfig,
    rng: &mut Rng,
    hook: Option<EvalHook>,
) -> Vec<EpochRecord> {
    let pad = config.stage2_pad;
    let augment = config.stage2_augment;
    let mut transform = |x: &Image, rng: &mut Rng| {
        if augment {
            standard_augment(x, pad, rng)
        } else {
            x.clone()
        }
    };
    run_stage(
        state,
        data,
        config.effective_stage2(),
        Stage::Stage2,
        config.loss_scale_mode,
        &mut transform,
        Some(config.full_resolution),
        rng,
        hook,
    )
}

/// Plain supervised training on hard labels with flip and padded shift.
pub fn train_classifier(
    net: Network,
    images: Vec<Image>,
    labels: &[usize],
    epochs: usize,
    config: &ExtractionConfig,
    rng: &mut Rng,
) -> (Network, Vec<EpochRecord>) {
    let classes = net.classes();
    let data = DistillSet::labeled(images, labels, classes);
    let mut state = TrainState::new(net, config, data.len(), epochs);
    let pad = config.stage2_pad;
    let mut transform = |x: &Image, rng: &mut Rng| standard_augment(x, pad, rng);
    let records = run_stage(
        &mut state,
        &data,
        epochs,
        Stage::Supervised,
        LossScale::None,
        &mut transform,
        None,
        rng,
        None,
    );
    (state.net, records)
}

/// Per-epoch history and final metrics of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub accuracy: Option<f64>,
    pub agreement: Option<f64>,
}

impl TrainReport {
    pub fn mean_seconds(&self, stage: Stage) -> Option<f64> {
        let secs: Vec<f64> = self
            .epochs
            .iter()
            .filter(|e| e.stage == stage)
            .map(|e| e.seconds)
            .collect();
        (!secs.is_empty()).then(|| secs.iter().sum::<f64>() / secs.len() as f64)
    }

    pub fn total_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let io = |e: csv::Error| TrainError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["epoch", "stage", "resolution", "loss", "kl", "fit_kl", "seconds", "accuracy"])
            .map_err(io)?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.stage.as_str().to_string(),
                e.resolution.to_string(),
                e.loss.to_string(),
                e.kl.to_string(),
                e.fit_kl.to_string(),
                e.seconds.to_string(),
                e.accuracy.map(|a| a.to_string()).unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
