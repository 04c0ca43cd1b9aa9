//! Error metrics and summary tables.

use crate::nn::{Model, NnError, Variant};
use crate::preprocess::PreparedGraph;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("error percentage is undefined for mean wear {0} (targets must have a positive mean)")]
    UndefinedMetric(f64),
    #[error("graph '{0}' has no wear target")]
    MissingTarget(String),
    #[error("no graphs to evaluate")]
    Empty,
    #[error("prediction has {pred} values but target has {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// `100 * mae / mean_wear`.
pub fn error_percentage(mae: f64, mean_wear: f64) -> Result<f64, MetricsError> {
    if !(mean_wear > 0.0) {
        return Err(MetricsError::UndefinedMetric(mean_wear));
    }
    Ok(100.0 * (mae / mean_wear))
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(pred, target)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(pred, target)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<(), MetricsError> {
    if pred.len() != target.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEval {
    pub id: String,
    pub node_count: usize,
    pub mean_wear: f64,
    pub max_wear: f64,
    pub mae: f64,
    pub mse: f64,
    /// `None` when this graph's targets are all zero.
    pub error_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub node_count: usize,
    /// Mean of the target wear over all nodes (N/m).
    pub mean_wear: f64,
    pub max_wear: f64,
    pub mae: f64,
    pub mse: f64,
    pub error_percent: f64,
    pub per_graph: Vec<GraphEval>,
}

#[derive(Default)]
struct Accum {
    n: usize,
    target_sum: f64,
    target_max: f64,
    abs_sum: f64,
    sq_sum: f64,
}

impl Accum {
    fn add(&mut self, pred: &[f64], target: &[f64]) {
        for (p, t) in pred.iter().zip(target) {
            let e = p - t;
            self.n += 1;
            self.target_sum += t;
            self.target_max = if self.n == 1 {
                *t
            } else {
                self.target_max.max(*t)
            };
            self.abs_sum += e.abs();
            self.sq_sum += e * e;
        }
    }

    fn mean(&self) -> f64 {
        self.target_sum / self.n as f64
    }

    fn mae(&self) -> f64 {
        self.abs_sum / self.n as f64
    }

    fn mse(&self) -> f64 {
        self.sq_sum / self.n as f64
    }
}

/// Summarizes `(id, prediction, target)` triples over the concatenation of
/// all their nodes, with a per-graph breakdown.
pub fn summarize<'a, I>(items: I) -> Result<EvalSummary, MetricsError>
where
    I: IntoIterator<Item = (&'a str, &'a [f64], &'a [f64])>,
{
    let mut total = Accum::default();
    let mut per_graph = Vec::new();
    for (id, pred, target) in items {
        check_lengths(pred, target)?;
        let mut acc = Accum::default();
        acc.add(pred, target);
        total.add(pred, target);
        per_graph.push(GraphEval {
            id: id.to_string(),
            node_count: acc.n,
            mean_wear: acc.mean(),
            max_wear: acc.target_max,
            mae: acc.mae(),
            mse: acc.mse(),
            error_percent: error_percentage(acc.mae(), acc.mean()).ok(),
        });
    }
    if total.n == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(EvalSummary {
        node_count: total.n,
        mean_wear: total.mean(),
        max_wear: total.target_max,
        mae: total.mae(),
        mse: total.mse(),
        error_percent: error_percentage(total.mae(), total.mean())?,
        per_graph,
    })
}

/// Eval-mode predictions of `model` on every graph.
pub fn predict_all(model: &Model, graphs: &[PreparedGraph]) -> Result<Vec<Vec<f64>>, MetricsError> {
    graphs
        .iter()
        .map(|g| Ok(model.predict(&g.features, &g.adjacency)?))
        .collect()
}

pub fn evaluate(model: &Model, graphs: &[PreparedGraph]) -> Result<EvalSummary, MetricsError> {
    if graphs.is_empty() {
        return Err(MetricsError::Empty);
    }
    for g in graphs {
        if g.target.is_none() {
            return Err(MetricsError::MissingTarget(g.id.clone()));
        }
    }
    let preds = predict_all(model, graphs)?;
    summarize(graphs.iter().zip(&preds).map(|(g, p)| {
        (
            g.id.as_str(),
            p.as_slice(),
            g.target.as_ref().expect("checked").as_slice(),
        )
    }))
}

/// Target statistics of a split, independent of any model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub node_count: usize,
    pub mean_wear: f64,
    pub max_wear: f64,
}

pub fn target_stats<'a, I>(targets: I) -> Option<TargetStats>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = Accum::default();
    for t in targets {
        acc.add(t, t);
    }
    (acc.n > 0).then(|| TargetStats {
        node_count: acc.n,
        mean_wear: acc.mean(),
        max_wear: acc.target_max,
    })
}

impl EvalSummary {
    /// Two-column text table: Mean, Maximum, MAE, MSE, Error %.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>14}", "Metric", "Value");
        let _ = writeln!(s, "{:<10} {:>14.4}", "Mean", self.mean_wear);
        let _ = writeln!(s, "{:<10} {:>14.4}", "Maximum", self.max_wear);
        let _ = writeln!(s, "{:<10} {:>14.4}", "MAE", self.mae);
        let _ = writeln!(s, "{:<10} {:>14.4}", "MSE", self.mse);
        let _ = writeln!(s, "{:<10} {:>13.2}%", "Error%", self.error_percent);
        s
    }
}

/// Model-comparison table in the layout: one column per dataset, rows Mean
/// and Maximum of the targets, then one Error % row per model.
pub fn comparison_table(columns: &[&str], rows: &[(Variant, Vec<&EvalSummary>)]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<22}", "Model");
    for c in columns {
        let _ = write!(s, " | {c:>12}");
    }
    s.push('\n');
    if let Some((_, first)) = rows.first() {
        let _ = write!(s, "{:<22}", "Mean");
        for e in first {
            let _ = write!(s, " | {:>12.2}", e.mean_wear);
        }
        s.push('\n');
        let _ = write!(s, "{:<22}", "Maximum");
        for e in first {
            let _ = write!(s, " | {:>12.2}", e.max_wear);
        }
        s.push('\n');
    }
    for (variant, evals) in rows {
        let _ = write!(s, "{:<22}", variant.display_name());
        for e in evals {
            let _ = write!(s, " | {:>11.1}%", e.error_percent);
        }
        s.push('\n');
    }
    s
}
