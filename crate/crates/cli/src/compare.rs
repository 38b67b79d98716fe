//! Side-by-side summary of several reports, grouped by method and budget.

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::report::ExperimentReport;

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("need at least two reports, got {0}")]
    TooFew(usize),
    #[error("incompatible reports: {0}")]
    IncompatibleReports(String),
    #[error("report {0} is flagged invalid")]
    InvalidReport(usize),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: csv::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub budget: u64,
    pub queries: u64,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub runtime_mean: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    /// Accuracy mean minus the first row's.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Standard deviation with the `n - 1` denominator; zero for fewer than two
/// values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Groups reports by (method, budget) in order of first appearance.
///
/// All reports must share a schema version and the target class list.
pub fn compare(reports: &[ExperimentReport]) -> Result<Comparison, CompareError> {
    if reports.len() < 2 {
        return Err(CompareError::TooFew(reports.len()));
    }
    let first = &reports[0];
    for (i, r) in reports.iter().enumerate() {
        if !r.valid || r.accuracy.is_none() {
            return Err(CompareError::InvalidReport(i));
        }
        if r.schema_version != first.schema_version {
            return Err(CompareError::IncompatibleReports(format!(
                "schema versions {} and {}",
                first.schema_version, r.schema_version
            )));
        }
        if r.task.class_names.len() != first.task.class_names.len() {
            return Err(CompareError::IncompatibleReports(format!(
                "{} classes vs {} classes",
                first.task.class_names.len(),
                r.task.class_names.len()
            )));
        }
        if r.task.class_names != first.task.class_names {
            return Err(CompareError::IncompatibleReports("target class names differ".into()));
        }
    }
    let mut groups: Vec<(String, u64, Vec<&ExperimentReport>)> = Vec::new();
    for r in reports {
        match groups
            .iter_mut()
            .find(|(m, b, _)| *m == r.method && *b == r.budget.budget)
        {
            Some((_, _, members)) => members.push(r),
            None => groups.push((r.method.clone(), r.budget.budget, vec![r])),
        }
    }
    let mut rows: Vec<ComparisonRow> = groups
        .into_iter()
        .map(|(method, budget, members)| {
            let acc: Vec<f64> = members.iter().filter_map(|r| r.accuracy).collect();
            let runtime: Vec<f64> = members.iter().map(|r| r.timings.train_seconds).collect();
            ComparisonRow {
                method,
                budget,
                queries: members[0].budget.queries,
                runs: members.len(),
                seeds: members.iter().map(|r| r.seed).collect(),
                runtime_mean: mean(&runtime),
                accuracy_mean: mean(&acc),
                accuracy_std: sample_std(&acc),
                delta: 0.0,
            }
        })
        .collect();
    let base = rows[0].accuracy_mean;
    for row in &mut rows {
        row.delta = row.accuracy_mean - base;
    }
    Ok(Comparison { rows })
}

impl Comparison {
    /// Fixed-width table; accuracies in percent.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>4}  {:>10}  {:>16}  {:>7}\n",
            "method", "budget", "runs", "runtime_s", "accuracy", "delta"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>4}  {:>10.2}  {:>7.2} ± {:<6.2}  {:>+7.2}\n",
                r.method,
                r.budget,
                r.runs,
                r.runtime_mean,
                100.0 * r.accuracy_mean,
                100.0 * r.accuracy_std,
                100.0 * r.delta
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CompareError> {
        let io = |source| CompareError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record([
            "method",
            "budget",
            "queries",
            "runs",
            "seeds",
            "runtime_mean",
            "accuracy_mean",
            "accuracy_std",
            "delta",
        ])
        .map_err(io)?;
        for r in &self.rows {
            let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
            w.write_record([
                r.method.clone(),
                r.budget.to_string(),
                r.queries.to_string(),
                r.runs.to_string(),
                seeds.join(";"),
                r.runtime_mean.to_string(),
                r.accuracy_mean.to_string(),
                r.accuracy_std.to_string(),
                r.delta.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| io(e.into()))
    }
}
