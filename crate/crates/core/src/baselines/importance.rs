use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, LabeledBatch, NetworkSpec, Scope, WeightState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceKind {
    Fisher,
    Mas,
    Si,
    Constant,
}

/// Per-parameter importance aligned with a weight vector, plus the anchor
/// the penalty pulls towards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMap {
    pub kind: ImportanceKind,
    pub values: Vec<f64>,
    pub anchor: Vec<f64>,
}

impl ImportanceMap {
    /// Mean importance per embedding layer.
    pub fn layer_means(&self, weights: &WeightState) -> Vec<f64> {
        crate::evalkit::layer_means(weights, &self.values)
    }
}

/// Mean of squared per-example gradients, `grad_of(i)` giving example `i`'s
/// gradient.
pub fn mean_squared_gradients<F>(examples: usize, len: usize, mut grad_of: F) -> Result<Vec<f64>>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    if examples == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut out = vec![0.0; len];
    for i in 0..examples {
        let g = grad_of(i)?;
        if g.len() != len {
            return Err(Error::DimensionMismatch { context: "per-example gradient", expected: len, actual: g.len() });
        }
        for (o, v) in out.iter_mut().zip(&g) {
            *o += v * v;
        }
    }
    let inv = 1.0 / examples as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// Diagonal empirical Fisher with the observed labels.
pub fn estimate_fisher(weights: &WeightState, spec: &NetworkSpec, data: &LabeledBatch) -> Result<ImportanceMap> {
    let values = mean_squared_gradients(data.len(), weights.len(), |i| {
        let one = data.gather(&[i]);
        Ok(nn::loss_and_grad(weights, spec, &one, Scope::All)?.1.values)
    })?;
    Ok(ImportanceMap { kind: ImportanceKind::Fisher, values, anchor: weights.values.clone() })
}

/// Mean absolute gradient of the squared logit norm.
pub fn estimate_mas(weights: &WeightState, spec: &NetworkSpec, data: &LabeledBatch) -> Result<ImportanceMap> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let logits = nn::forward(weights, spec, &data.inputs)?;
    let mut values = vec![0.0; weights.len()];
    for r in 0..data.len() {
        let cotangent: Vec<f64> = logits.row(r).iter().map(|f| 2.0 * f).collect();
        let g = nn::logits_vjp(weights, spec, data.inputs.row(r), &cotangent)?;
        for (o, v) in values.iter_mut().zip(&g.values) {
            *o += v.abs();
        }
    }
    let inv = 1.0 / data.len() as f64;
    values.iter_mut().for_each(|v| *v *= inv);
    Ok(ImportanceMap { kind: ImportanceKind::Mas, values, anchor: weights.values.clone() })
}

/// Running path integral `sum -g * dtheta` over one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiTracker {
    pub start: Vec<f64>,
    pub path: Vec<f64>,
}

impl SiTracker {
    pub fn new(start: &[f64]) -> Self {
        Self { start: start.to_vec(), path: vec![0.0; start.len()] }
    }

    pub fn record(&mut self, grad: &[f64], delta: &[f64]) {
        for ((p, g), d) in self.path.iter_mut().zip(grad).zip(delta) {
            *p -= g * d;
        }
    }

    /// Task contribution `max(path, 0) / ((end - start)^2 + damping)`.
    pub fn finish(&self, end: &[f64], damping: f64) -> Result<Vec<f64>> {
        if end.len() != self.start.len() {
            return Err(Error::DimensionMismatch { context: "SI end weights", expected: self.start.len(), actual: end.len() });
        }
        Ok(self
            .path
            .iter()
            .zip(end.iter().zip(&self.start))
            .map(|(p, (e, s))| p.max(0.0) / ((e - s) * (e - s) + damping))
            .collect())
    }
}

/// SI importance of one task from its recorded `(grad, delta)` steps.
pub fn accumulate_si(trajectory: &[(Vec<f64>, Vec<f64>)], start: &[f64], end: &[f64], damping: f64) -> Result<Vec<f64>> {
    let mut tracker = SiTracker::new(start);
    for (g, d) in trajectory {
        if g.len() != start.len() || d.len() != start.len() {
            return Err(Error::DimensionMismatch {
                context: "SI trajectory step",
                expected: start.len(),
                actual: g.len().min(d.len()),
            });
        }
        tracker.record(g, d);
    }
    tracker.finish(end, damping)
}
