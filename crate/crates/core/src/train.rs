//! Mini-batch training loops shared by the learners and the probes.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, AdamConfig, AdamState, LabeledBatch, NetworkSpec, Scope, WeightState};
use crate::seed::{self, Rng};

/// Stop once the epoch-mean loss improves by less than `tol` (relative)
/// for `patience` consecutive epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub tol: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlateauTracker {
    previous: Option<f64>,
    stalled: usize,
}

impl PlateauTracker {
    /// Records an epoch loss; returns true when training should stop.
    pub fn observe(&mut self, loss: f64, rule: &Plateau) -> bool {
        if let Some(prev) = self.previous {
            let improvement = (prev - loss) / prev.abs().max(f64::MIN_POSITIVE);
            if improvement < rule.tol {
                self.stalled += 1;
            } else {
                self.stalled = 0;
            }
        }
        self.previous = Some(loss);
        self.stalled >= rule.patience
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub epochs_run: usize,
    pub final_loss: Option<f64>,
}

/// Shuffled example order for one epoch.
pub fn epoch_order(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Trains only the output head on `batch` with the embedding frozen.
///
/// Features are computed once; each epoch visits a fresh permutation in
/// chunks of `batch_size` and applies one Adam step per chunk with a fresh
/// optimizer over the head parameters.
pub fn fit_head(
    weights: &mut WeightState,
    spec: &NetworkSpec,
    batch: &LabeledBatch,
    max_epochs: usize,
    batch_size: usize,
    adam: AdamConfig,
    plateau: Option<Plateau>,
    seed: u64,
) -> Result<FitReport> {
    if batch.is_empty() {
        return Err(Error::EmptyReplay);
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    if let Some(&label) = batch.labels.iter().find(|&&l| l >= spec.output_classes) {
        return Err(Error::LabelOutOfRange { label, classes: spec.output_classes });
    }
    let features = nn::embed(weights, spec, &batch.inputs)?;
    let head_len = weights.layout.output_range().len();
    let mut opt = AdamState::new(head_len, adam);
    let mut rng = seed::rng(seed);
    let mut tracker = PlateauTracker::default();
    let mut grad = vec![0.0; head_len];
    let mut report = FitReport { epochs_run: 0, final_loss: None };
    for _ in 0..max_epochs {
        let order = epoch_order(batch.len(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let feats = features.gather(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| batch.labels[i]).collect();
            let loss = nn::head_backward(weights, &feats, &labels, &mut grad, None);
            total += loss * chunk.len() as f64;
            opt.apply(weights.output_mut(), &grad)?;
        }
        let epoch_loss = total / batch.len() as f64;
        report.epochs_run += 1;
        report.final_loss = Some(epoch_loss);
        if let Some(rule) = &plateau {
            if tracker.observe(epoch_loss, rule) {
                break;
            }
        }
    }
    Ok(report)
}

/// `strength * sum_i c_i (theta_i - anchor_i)^2` over a full parameter
/// vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticPenalty {
    pub strength: f64,
    pub coefficients: Vec<f64>,
    pub anchor: Vec<f64>,
}

impl QuadraticPenalty {
    pub fn value(&self, params: &[f64]) -> f64 {
        self.strength
            * params
                .iter()
                .zip(&self.coefficients)
                .zip(&self.anchor)
                .map(|((p, c), a)| c * (p - a) * (p - a))
                .sum::<f64>()
    }

    pub fn add_grad(&self, params: &[f64], grad: &mut [f64]) {
        let two_s = 2.0 * self.strength;
        for (((g, p), c), a) in grad.iter_mut().zip(params).zip(&self.coefficients).zip(&self.anchor) {
            *g += two_s * c * (p - a);
        }
    }

    fn check(&self, len: usize) -> Result<()> {
        if self.coefficients.len() != len || self.anchor.len() != len {
            return Err(Error::LayoutMismatch(format!(
                "penalty vectors have {}/{} entries, weights have {len}",
                self.coefficients.len(),
                self.anchor.len()
            )));
        }
        if self.strength < 0.0 {
            return Err(Error::InvalidArgument("penalty strength must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-step callback receiving the task-loss gradient and the parameter
/// change the optimizer applied.
pub type StepObserver<'a> = &'a mut dyn FnMut(&[f64], &[f64]);

/// Full-network training for `epochs` epochs with an optional quadratic
/// penalty. Returns the last epoch-mean task loss.
#[allow(clippy::too_many_arguments)]
pub fn fit_full(
    weights: &mut WeightState,
    spec: &NetworkSpec,
    batch: &LabeledBatch,
    epochs: usize,
    batch_size: usize,
    adam: AdamConfig,
    seed: u64,
    penalty: Option<&QuadraticPenalty>,
    mut observer: Option<StepObserver<'_>>,
) -> Result<Option<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyReplay);
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    if let Some(p) = penalty {
        p.check(weights.len())?;
    }
    let mut opt = AdamState::new(weights.len(), adam);
    let mut rng = seed::rng(seed);
    let mut last = None;
    let mut before = Vec::new();
    let mut delta = vec![0.0; weights.len()];
    for _ in 0..epochs {
        let order = epoch_order(batch.len(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let mini = batch.gather(chunk);
            let (loss, grad) = nn::loss_and_grad(weights, spec, &mini, Scope::All)?;
            total += loss * chunk.len() as f64;
            let mut step_grad = grad.values.clone();
            if let Some(p) = penalty {
                p.add_grad(&weights.values, &mut step_grad);
            }
            if observer.is_some() {
                before.clone_from(&weights.values);
            }
            opt.apply(&mut weights.values, &step_grad)?;
            if let Some(obs) = observer.as_mut() {
                for ((d, a), b) in delta.iter_mut().zip(&weights.values).zip(&before) {
                    *d = a - b;
                }
                obs(&grad.values, &delta);
            }
        }
        last = Some(total / batch.len() as f64);
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_needs_consecutive_stalls() {
        let rule = Plateau { tol: 1e-3, patience: 3 };
        let mut t = PlateauTracker::default();
        assert!(!t.observe(1.0, &rule));
        assert!(!t.observe(0.9999, &rule));
        assert!(!t.observe(0.9998, &rule));
        assert!(!t.observe(0.5, &rule)); // big improvement resets
        assert!(!t.observe(0.5, &rule));
        assert!(!t.observe(0.5, &rule));
        assert!(t.observe(0.5001, &rule));
    }

    #[test]
    fn penalty_hand_value() {
        let p = QuadraticPenalty {
            strength: 0.5,
            coefficients: vec![1.0, 1.0],
            anchor: vec![0.0, 1.0],
        };
        assert_eq!(p.value(&[2.0, -1.0]), 0.5 * (4.0 + 4.0));
        let mut g = vec![0.0; 2];
        p.add_grad(&[2.0, -1.0], &mut g);
        assert_eq!(g, vec![2.0, -2.0]);
    }
}
