//! One extraction run, end to end.

use std::path::Path;
use std::time::Instant;

use clonekit::config::{ExtractionConfig, SelectionMode};
use clonekit::data::{corrupt_gaussian, LabeledDataset};
use clonekit::image::Image;
use clonekit::nn::{Act, Network};
use clonekit::rng::{make_rng_stream, Stream};
use clonekit::selection::{
    build_plan, class_similarity, embed_names, prompt, random_baseline_plan, select_queries,
    QuerySet, SamplingPlan,
};
use clonekit::trainer::{
    evaluate, train_stage1, train_stage2, DistillSet, ResponseCache,
    Stage, TrainError, TrainReport, TrainState,
};
use clonekit::ttda::{adapt_stream, write_adapt_log, AdaptConfig, AdaptLogRow};
use clonekit::victim::{BlackBox, EvaluationOracle, VictimError};

use crate::report::{ExperimentReport, TaskMeta, TtdaEval, TtdaSummary};
use crate::task::{encoder, Task, VictimAccess};
use crate::RunError;

/// Per-class quotas for the configured selection mode.
pub fn plan(config: &ExtractionConfig, task: &Task) -> Result<SamplingPlan, RunError> {
    let q = config.queries() as usize;
    Ok(match config.selection_mode {
        SelectionMode::Random => random_baseline_plan(&task.pool, q)?,
        SelectionMode::Language => {
            let enc = encoder(config)?;
            let texts = |names: &[&str]| -> Vec<String> {
                names.iter().map(|n| prompt(&config.name_template, n)).collect()
            };
            let targets: Vec<&str> = task.target_names.iter().map(String::as_str).collect();
            let sim = class_similarity(
                &embed_names(&texts(&task.pool.class_names()), enc.as_ref())?,
                &embed_names(&texts(&targets), enc.as_ref())?,
            )?;
            build_plan(&task.pool, &sim, q)?
        }
    })
}

pub fn select(config: &ExtractionConfig, task: &Task) -> Result<(SamplingPlan, QuerySet), RunError> {
    let plan = plan(config, task)?;
    let queries = select_queries(
        &task.pool,
        &plan,
        &mut make_rng_stream(config.seed, Stream::Selection),
    )?;
    Ok((plan, queries))
}

/// A finished (or aborted) run and what it produced.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub report: ExperimentReport,
    pub surrogate: Option<Network>,
    pub clean_log: Vec<AdaptLogRow>,
    pub noisy_log: Vec<AdaptLogRow>,
}

fn task_meta(task: &Task) -> TaskMeta {
    TaskMeta {
        class_names: task.target_names.clone(),
        test_count: task.test.len(),
        test_digest: task.test.digest(),
        pool_digest: task.pool.digest(),
    }
}

fn is_budget_error(e: &TrainError) -> bool {
    matches!(e, TrainError::Victim(VictimError::BudgetExhausted(_)))
}

/// Argmax predictions in batches of `batch`, the way a deployed model without
/// alignment would serve the stream.
fn plain_predict(net: &Network, stream: &[&Image], batch: usize, mean: &[f32], std: &[f32]) -> Vec<usize> {
    let classes = net.classes();
    let mut out = Vec::with_capacity(stream.len());
    for chunk in stream.chunks(batch.max(1)) {
        let logits = net.logits(&Act::from_images(chunk, mean, std));
        for z in logits.chunks(classes) {
            let mut best = 0;
            for (i, &v) in z.iter().enumerate() {
                if v > z[best] {
                    best = i;
                }
            }
            out.push(best);
        }
    }
    out
}

fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len().max(1) as f64
}

/// Runs the stream once without alignment and once with it, on a copy of the
/// surrogate.
pub fn align(net: &Network, data: &LabeledDataset, config: &ExtractionConfig) -> (TtdaEval, Vec<AdaptLogRow>) {
    let stream = data.image_refs();
    let (mean, std) = (&config.input_mean, &config.input_std);
    let start = Instant::now();
    let plain = plain_predict(net, &stream, config.ttda_batch_size, mean, std);
    let plain_seconds = start.elapsed().as_secs_f64();
    let mut adapted = net.clone();
    let outcome = adapt_stream(&mut adapted, &stream, &AdaptConfig::from_config(config), mean, std);
    let eval = TtdaEval {
        accuracy_before: accuracy(&plain, &data.labels),
        accuracy_after: accuracy(&outcome.predictions, &data.labels),
        plain_seconds,
        overhead_seconds: outcome.overhead_seconds,
        latency_overhead: outcome.overhead_seconds / plain_seconds.max(f64::MIN_POSITIVE),
        extractor_unchanged: adapted.extractor().digest() == net.extractor().digest(),
        support_digest: outcome.adapter.support_digest(),
    };
    (eval, outcome.log)
}

/// Responses for `queries`, from the cache directory when one is configured.
fn responses(
    config: &ExtractionConfig,
    queries: &QuerySet,
    images: &[Image],
    victim: &dyn BlackBox,
) -> Result<(ResponseCache, bool), TrainError> {
    let dir = config.cache_dir.as_deref().map(Path::new);
    ResponseCache::obtain(queries, images, victim, dir)
}

/// The full pipeline on an already loaded task.
///
/// Running out of budget is not an error: the report comes back flagged
/// invalid with whatever was recorded up to that point. The same holds when
/// the ledger disagrees with the number of queries sent.
pub fn extract(config: &ExtractionConfig, task: &Task, victim: &VictimAccess) -> Result<Extraction, RunError> {
    let endpoint = victim.connect(config);
    extract_with(config, task, endpoint.as_ref(), victim.oracle().as_ref())
}

/// [`extract`] against a caller-held endpoint, so the caller can inspect its
/// ledger afterwards. `oracle` is used for agreement only.
pub fn extract_with(
    config: &ExtractionConfig,
    task: &Task,
    endpoint: &dyn BlackBox,
    oracle: Option<&EvaluationOracle>,
) -> Result<Extraction, RunError> {
    config.validate()?;
    let started = Instant::now();
    let mut report = ExperimentReport::new(config, task_meta(task));
    let meta = endpoint.meta()?;
    if meta.class_count != task.class_count() {
        return Err(RunError::TaskMismatch(format!(
            "victim has {} classes, task has {}",
            meta.class_count,
            task.class_count()
        )));
    }
    let remaining_before = meta.remaining;
    report.budget.budget = meta.budget;
    report.budget.remaining = meta.remaining;

    let t = Instant::now();
    let (plan, queries) = select(config, task)?;
    report.timings.selection_seconds = t.elapsed().as_secs_f64();
    report.query_digest = Some(queries.digest());
    report.plan = Some(plan);

    let images = task.pool.source().load_many(&queries.refs)?;
    let t = Instant::now();
    let (cache, cache_hit) = match responses(config, &queries, &images, endpoint) {
        Ok(found) => found,
        Err(e) if is_budget_error(&e) => {
            let remaining = endpoint.remaining_budget()?;
            report.budget.remaining = remaining;
            report.budget.spent = remaining_before.saturating_sub(remaining);
            report.timings.total_seconds = started.elapsed().as_secs_f64();
            report.invalidate(e.to_string());
            return Ok(Extraction {
                report,
                surrogate: None,
                clean_log: Vec::new(),
                noisy_log: Vec::new(),
            });
        }
        Err(e) => return Err(e.into()),
    };
    report.timings.collection_seconds = t.elapsed().as_secs_f64();
    report.cache_digest = Some(cache.digest());
    report.budget.cache_hit = cache_hit;
    let remaining_collected = endpoint.remaining_budget()?;

    let classes = task.class_count();
    let data = DistillSet::new(images, &cache, config.temperature)?;
    let net = Network::init(
        config.surrogate_arch(classes),
        &mut make_rng_stream(config.seed, Stream::Init),
    );
    let mut state = TrainState::new(net, config, data.len(), config.total_epochs());
    let mut rng = make_rng_stream(config.seed, Stream::Augment);
    let (mean, std) = (config.input_mean, config.input_std);
    let mut hook = |n: &Network| evaluate(n, &task.test, &mean, &std, None).accuracy;
    let mut epochs = train_stage1(&mut state, &data, config, &mut rng, Some(&mut hook))?;
    epochs.extend(train_stage2(&mut state, &data, config, &mut rng, Some(&mut hook)));
    let curves = TrainReport {
        epochs,
        accuracy: None,
        agreement: None,
    };
    report.timings.stage1_epoch_seconds = curves.mean_seconds(Stage::Stage1);
    report.timings.stage2_epoch_seconds = curves.mean_seconds(Stage::Stage2);
    report.timings.train_seconds = curves.total_seconds();
    report.epochs = curves.epochs;

    let surrogate = state.net;
    let result = evaluate(&surrogate, &task.test, &mean, &std, oracle);
    report.accuracy = Some(result.accuracy);
    report.agreement = result.agreement;
    report.victim_accuracy = oracle.map(|o| accuracy(&o.predict(&task.test.image_refs()), &task.test.labels));

    let noisy = corrupt_gaussian(
        &task.test,
        config.noise_sigma,
        &mut make_rng_stream(config.seed, Stream::Noise),
    );
    report.noisy_accuracy = Some(evaluate(&surrogate, &noisy, &mean, &std, None).accuracy);
    let (mut clean_log, mut noisy_log) = (Vec::new(), Vec::new());
    if config.ttda {
        let (clean, clog) = align(&surrogate, &task.test, config);
        let (noisy, nlog) = align(&surrogate, &noisy, config);
        report.ttda = Some(TtdaSummary { clean, noisy });
        (clean_log, noisy_log) = (clog, nlog);
    }

    let remaining = endpoint.remaining_budget()?;
    report.budget.remaining = remaining;
    report.budget.spent = remaining_before.saturating_sub(remaining);
    report.budget.spent_after_collection = remaining_collected.saturating_sub(remaining);
    report.timings.total_seconds = started.elapsed().as_secs_f64();
    let expected = if cache_hit { 0 } else { queries.len() as u64 };
    report.valid = true;
    if report.budget.spent != expected || report.budget.spent_after_collection != 0 {
        report.invalidate(format!(
            "ledger shows {} units spent ({} after collection), expected {expected}",
            report.budget.spent, report.budget.spent_after_collection
        ));
    }
    if report.ttda.as_ref().is_some_and(|t| !(t.clean.extractor_unchanged && t.noisy.extractor_unchanged)) {
        report.invalidate("test-time alignment changed the feature extractor");
    }
    Ok(Extraction {
        report,
        surrogate: Some(surrogate),
        clean_log,
        noisy_log,
    })
}

/// Writes `report.json`, `curves.csv`, `plan.json`, the surrogate and the
/// adaptation logs under `dir`.
pub fn write_artifacts(run: &Extraction, dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(RunError::io(dir))?;
    run.report.save(&dir.join("report.json"))?;
    let curves = TrainReport {
        epochs: run.report.epochs.clone(),
        accuracy: run.report.accuracy,
        agreement: run.report.agreement,
    };
    curves.write_csv(&dir.join("curves.csv"))?;
    if let Some(plan) = &run.report.plan {
        let path = dir.join("plan.json");
        std::fs::write(&path, plan.to_json()).map_err(RunError::io(&path))?;
    }
    if let Some(net) = &run.surrogate {
        let path = dir.join("surrogate.json");
        let json = serde_json::to_vec(net).expect("network serializes");
        std::fs::write(&path, json).map_err(RunError::io(&path))?;
    }
    if run.report.ttda.is_some() {
        for (name, rows) in [("adapt_clean.csv", &run.clean_log), ("adapt_noisy.csv", &run.noisy_log)] {
            let path = dir.join(name);
            write_adapt_log(rows, &path).map_err(RunError::io(&path))?;
        }
    }
    Ok(())
}

/// Loads the task and victim named by `config`, runs the pipeline and writes
/// artifacts when `out_dir` is given.
pub fn run(config: &ExtractionConfig, out_dir: Option<&Path>) -> Result<ExperimentReport, RunError> {
    let task = Task::load(config)?;
    let victim = VictimAccess::resolve(config)?;
    let extraction = extract(config, &task, &victim)?;
    if let Some(dir) = out_dir {
        write_artifacts(&extraction, dir)?;
    }
    Ok(extraction.report)
}
