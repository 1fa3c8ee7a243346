//! Single-head evaluation, backward transfer, few-shot probes, confusion
//! matrices and Fisher diagnostics.
//!
//! Backward transfer uses the standard definition
//! `BWT = 1/(T-1) * sum_{i<T} (R[T,i] - R[i,i])`, where `R[t,i]` is the
//! accuracy on task `i`'s test set after training on task `t`. All
//! accuracies and deltas are absolute fractions (multiply by 100 for
//! percentage points).

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::baselines::estimate_fisher;
use crate::error::{Error, Result};
use crate::nn::{self, AdamConfig, LabeledBatch, NetworkSpec, WeightState};
use crate::taskgen::{ClassIndex, TaskDataset};
use crate::train;

/// Metrics after learning task `task_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub task_index: usize,
    pub a_top1: f64,
    pub a_top5: f64,
    /// Set when fewer than six classes are live and top-5 is reported as 1.
    pub top5_flagged: bool,
    /// `R[t, i]` for `i = 1..=t`.
    pub per_task_accuracy: Vec<f64>,
    pub bwt: Option<f64>,
    pub probe_nc: Option<f64>,
    pub probe_bc: Option<f64>,
    pub fisher_layer_means: Option<Vec<f64>>,
    pub confusion: Option<ConfusionMatrix>,
    pub wall_ms: Option<u64>,
}

impl MetricsRecord {
    pub fn from_eval(task_index: usize, eval: &SingleHeadEval) -> Self {
        Self {
            task_index,
            a_top1: eval.a_top1,
            a_top5: eval.a_top5,
            top5_flagged: eval.top5_flagged,
            per_task_accuracy: eval.per_task.clone(),
            bwt: None,
            probe_nc: None,
            probe_bc: None,
            fisher_layer_means: None,
            confusion: None,
            wall_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_echo: Vec<(String, String)>,
    pub seed: u64,
    pub method: String,
    pub records: Vec<MetricsRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleHeadEval {
    pub a_top1: f64,
    pub a_top5: f64,
    pub top5_flagged: bool,
    pub per_task: Vec<f64>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Pools the test sets of tasks `1..=t` and predicts over every class in
/// the head, with no task identity.
pub fn evaluate_single_head(
    weights: &WeightState,
    spec: &NetworkSpec,
    classes: &ClassIndex,
    tests: &[TaskDataset],
) -> Result<SingleHeadEval> {
    if tests.is_empty() {
        return Err(Error::InvalidArgument("no test sets to evaluate".into()));
    }
    let batch = classes.batch(tests.iter().flat_map(|t| &t.examples))?;
    if let Some(&label) = batch.labels.iter().find(|&&l| l >= spec.output_classes) {
        return Err(Error::LabelOutOfRange { label, classes: spec.output_classes });
    }
    let logits = nn::forward(weights, spec, &batch.inputs)?;
    let predictions = nn::argmax_rows(&logits);
    let live = spec.output_classes;
    let top5_flagged = live < 6;

    let mut per_task = Vec::with_capacity(tests.len());
    let mut row = 0;
    let (mut hits1, mut hits5) = (0usize, 0usize);
    for task in tests {
        let mut task_hits = 0usize;
        for _ in 0..task.len() {
            let y = batch.labels[row];
            if predictions[row] == y {
                task_hits += 1;
            }
            if !top5_flagged && in_top_k(logits.row(row), y, 5) {
                hits5 += 1;
            }
            row += 1;
        }
        hits1 += task_hits;
        per_task.push(task_hits as f64 / task.len().max(1) as f64);
    }
    let n = batch.len() as f64;
    Ok(SingleHeadEval {
        a_top1: hits1 as f64 / n,
        a_top5: if top5_flagged { 1.0 } else { hits5 as f64 / n },
        top5_flagged,
        per_task,
        predictions,
        labels: batch.labels,
    })
}

/// True when fewer than `k` logits beat the target's (ties count against
/// the target only when they come first, matching argmax).
fn in_top_k(row: &[f64], target: usize, k: usize) -> bool {
    let t = row[target];
    let better = row
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > t || (v == t && i < target))
        .count();
    better < k
}

/// `r[t-1][i-1]` holds `R[t,i]`; uses the last row as `R[T, .]`.
pub fn compute_bwt(r: &[Vec<f64>]) -> Result<f64> {
    let t = r.len();
    if t < 2 {
        return Err(Error::InvalidArgument("BWT needs at least two tasks".into()));
    }
    let last = &r[t - 1];
    if last.len() < t - 1 || (0..t - 1).any(|i| r[i].len() <= i) {
        return Err(Error::InvalidArgument("accuracy matrix is missing entries".into()));
    }
    Ok((0..t - 1).map(|i| last[i] - r[i][i]).sum::<f64>() / (t - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Fine-tune the whole network instead of only the fresh head.
    pub full_finetune: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 25,
            adam: AdamConfig::default(),
            full_finetune: false,
        }
    }
}

/// Few-shot probe: a fresh zero-initialised N-way head on a clone of
/// `start`, trained on `train` and scored (top-1) on `test`. The caller's
/// weights are never touched.
pub fn run_probe(
    start: &WeightState,
    spec: &NetworkSpec,
    train: &TaskDataset,
    test: &TaskDataset,
    seen: &HashSet<usize>,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<f64> {
    let ids = train.class_ids();
    if let Some(&leak) = ids.iter().chain(test.class_ids().iter()).find(|id| seen.contains(id)) {
        return Err(Error::ClassLeakage(leak));
    }
    let (trunk, trunk_spec) = start.without_head(spec);
    let (mut weights, probe_spec) = nn::grow_output(&trunk, &trunk_spec, ids.len(), 0.0, 0)?;
    let index = ClassIndex::from_ids(&ids);
    let batch = index.batch(&train.examples)?;
    if cfg.full_finetune {
        train::fit_full(&mut weights, &probe_spec, &batch, cfg.epochs, cfg.batch_size, cfg.adam, seed, None, None)?;
    } else {
        train::fit_head(&mut weights, &probe_spec, &batch, cfg.epochs, cfg.batch_size, cfg.adam, None, seed)?;
    }
    let test_batch = index.batch(&test.examples)?;
    accuracy(&weights, &probe_spec, &test_batch)
}

pub fn accuracy(weights: &WeightState, spec: &NetworkSpec, batch: &LabeledBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let logits = nn::forward(weights, spec, &batch.inputs)?;
    let hits = nn::argmax_rows(&logits)
        .iter()
        .zip(&batch.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / batch.len() as f64)
}

/// `counts[y * classes + y_hat]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.classes.max(1)).map(|r| r.iter().sum()).collect()
    }

    /// Each row divided by its sum; all-zero rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .chunks(self.classes.max(1))
            .map(|r| {
                let s: u64 = r.iter().sum();
                r.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }
}

pub fn confusion_matrix(predictions: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "confusion predictions",
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    let mut m = ConfusionMatrix {
        classes,
        counts: vec![0; classes * classes],
    };
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= classes || p >= classes {
            return Err(Error::LabelOutOfRange { label: y.max(p), classes });
        }
        m.counts[y * classes + p] += 1;
    }
    Ok(m)
}

/// Mean diagonal Fisher per embedding layer.
pub fn fisher_trace_report(weights: &WeightState, spec: &NetworkSpec, data: &LabeledBatch) -> Result<Vec<f64>> {
    let fisher = estimate_fisher(weights, spec, data)?;
    Ok(layer_means(weights, &fisher.values))
}

pub(crate) fn layer_means(weights: &WeightState, values: &[f64]) -> Vec<f64> {
    weights
        .layout
        .embedding_layers()
        .iter()
        .map(|l| values[l.range()].iter().sum::<f64>() / l.param_count() as f64)
        .collect()
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
