//! Two-step consolidation.
//!
//! Each task runs:
//!
//! 1. **Tagging.** On the slow weights `theta_s` and the current task only,
//!    measure each embedding parameter's activity `a_t = |E[dL/dtheta]|`,
//!    add it to the cumulative activity and recompute the gate
//!    `delta = sigmoid(m * (a_{1:t} - mean_l(a_{1:t}) / t))`.
//! 2. **Fast learning.** Copy `theta_s` into the fast weights `theta_f` and
//!    take `k` Adam steps on replay mini-batches with the loss
//!    `CE + lambda * sum delta (theta_f - theta_s)^2` (penalty on the
//!    embedding only), then fit the output head with the embedding frozen.
//! 3. **Consolidation.** `theta_s <- (1 - beta) theta_s + beta theta_f`.
//!
//! The fast weights are used for inference.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::baselines::ReplayBuffer;
use crate::error::{Error, Result};
use crate::evalkit::{self, MetricsRecord, ProbeConfig};
use crate::nn::{self, adam_step, AdamConfig, AdamState, LabeledBatch, NetworkSpec, Scope, WeightState};
use crate::seed;
use crate::taskgen::{self, ClassIndex, StreamMode, TaskDataset, TaskStream};
use crate::train::{self, FitReport, Plateau};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Largest double below one; gates are clamped into the open interval.
const GATE_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityState {
    /// Cumulative activity over the embedding parameters.
    pub cumulative: Vec<f64>,
    pub tasks_seen: usize,
    /// Parameter count of each embedding layer, in order.
    pub layer_sizes: Vec<usize>,
    /// `(1/t) * mean` of the cumulative activity per layer.
    pub per_layer_mean: Vec<f64>,
    pub gate: Vec<f64>,
    pub gate_scale: f64,
    pub penalty_weight: f64,
}

impl ActivityState {
    pub fn new(layer_sizes: Vec<usize>, gate_scale: f64, penalty_weight: f64) -> Self {
        let n: usize = layer_sizes.iter().sum();
        Self {
            cumulative: vec![0.0; n],
            tasks_seen: 0,
            per_layer_mean: vec![0.0; layer_sizes.len()],
            layer_sizes,
            gate: vec![0.5; n],
            gate_scale,
            penalty_weight,
        }
    }

    pub fn for_weights(weights: &WeightState, gate_scale: f64, penalty_weight: f64) -> Self {
        let sizes = weights.layout.embedding_layers().iter().map(|l| l.param_count()).collect();
        Self::new(sizes, gate_scale, penalty_weight)
    }

    fn recompute_means(&mut self) {
        if self.tasks_seen == 0 {
            return;
        }
        let t = self.tasks_seen as f64;
        let mut start = 0;
        for (mean, &n) in self.per_layer_mean.iter_mut().zip(&self.layer_sizes) {
            let sum: f64 = self.cumulative[start..start + n].iter().sum();
            *mean = sum / n as f64 / t;
            start += n;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeFrom {
    Slow,
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TscConfig {
    pub beta: f64,
    pub k: usize,
    pub lambda: f64,
    pub gate_scale: f64,
    /// Update the head together with the embedding during the `k` steps.
    pub joint_step2: bool,
    pub head_max_epochs: usize,
    pub plateau: Plateau,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub probe_from: ProbeFrom,
}

impl Default for TscConfig {
    fn default() -> Self {
        Self {
            beta: 0.01,
            k: 100,
            lambda: 1e-10,
            gate_scale: 1.0,
            joint_step2: true,
            head_max_epochs: 500,
            plateau: Plateau { tol: 1e-4, patience: 3 },
            batch_size: 25,
            adam: AdamConfig::default(),
            probe_from: ProbeFrom::Slow,
        }
    }
}

impl TscConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument("lambda must be >= 0".into()));
        }
        if !(self.gate_scale > 0.0) {
            return Err(Error::InvalidArgument("gate scale m must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TscState {
    pub spec: NetworkSpec,
    pub slow: WeightState,
    pub fast: WeightState,
    pub activity: ActivityState,
    pub classes: ClassIndex,
    pub task_index: usize,
}

impl TscState {
    /// Starts from `weights` (typically a pretrained embedding); any
    /// existing head is dropped.
    pub fn new(spec: &NetworkSpec, weights: &WeightState, cfg: &TscConfig) -> Result<Self> {
        weights.check_spec(spec)?;
        let (slow, spec) = weights.without_head(spec);
        Ok(Self {
            activity: ActivityState::for_weights(&slow, cfg.gate_scale, cfg.lambda),
            fast: slow.clone(),
            slow,
            spec,
            classes: ClassIndex::new(),
            task_index: 0,
        })
    }

    pub fn probe_weights(&self, from: ProbeFrom) -> &WeightState {
        match from {
            ProbeFrom::Slow => &self.slow,
            ProbeFrom::Fast => &self.fast,
        }
    }

    fn slow_spec(&self) -> NetworkSpec {
        self.spec.with_output_classes(self.slow.layout.output_classes())
    }

    /// Spec matching `probe_weights(from)`.
    pub fn probe_spec(&self, from: ProbeFrom) -> NetworkSpec {
        match from {
            ProbeFrom::Slow => self.slow_spec(),
            ProbeFrom::Fast => self.spec.clone(),
        }
    }
}

/// `|mean gradient|` of the loss on `data` for every embedding parameter.
pub fn compute_activity(slow: &WeightState, spec: &NetworkSpec, data: &LabeledBatch) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (_, grad) = nn::loss_and_grad(slow, spec, data, Scope::EmbeddingOnly)?;
    Ok(grad.values[..slow.layout.embedding_len()].iter().map(|g| g.abs()).collect())
}

pub fn update_cumulative(activity: &mut ActivityState, a_t: &[f64]) -> Result<()> {
    if a_t.len() != activity.cumulative.len() {
        return Err(Error::DimensionMismatch {
            context: "activity",
            expected: activity.cumulative.len(),
            actual: a_t.len(),
        });
    }
    for (c, a) in activity.cumulative.iter_mut().zip(a_t) {
        *c += a;
    }
    activity.tasks_seen += 1;
    activity.recompute_means();
    Ok(())
}

pub fn compute_gate(activity: &ActivityState) -> Result<Vec<f64>> {
    if activity.tasks_seen == 0 {
        return Err(Error::InvalidArgument("gate needs at least one task of activity".into()));
    }
    let m = activity.gate_scale;
    let mut gate = Vec::with_capacity(activity.cumulative.len());
    let mut start = 0;
    for (&threshold, &n) in activity.per_layer_mean.iter().zip(&activity.layer_sizes) {
        gate.extend(
            activity.cumulative[start..start + n]
                .iter()
                .map(|a| sigmoid(m * (a - threshold)).clamp(f64::MIN_POSITIVE, GATE_MAX)),
        );
        start += n;
    }
    Ok(gate)
}

/// `lambda * sum gate (fast - slow)^2` and its gradient in `fast`.
pub fn stc_penalty(fast_e: &[f64], slow_e: &[f64], gate: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }
    if slow_e.len() != fast_e.len() || gate.len() != fast_e.len() {
        return Err(Error::DimensionMismatch {
            context: "stc penalty",
            expected: fast_e.len(),
            actual: if slow_e.len() != fast_e.len() { slow_e.len() } else { gate.len() },
        });
    }
    let mut value = 0.0;
    let grad = fast_e
        .iter()
        .zip(slow_e)
        .zip(gate)
        .map(|((f, s), d)| {
            let diff = f - s;
            value += d * diff * diff;
            2.0 * lambda * d * diff
        })
        .collect();
    Ok((lambda * value, grad))
}

/// Indices of one step-2 mini-batch: uniform with replacement, or the
/// whole set in order when the batch size covers it.
fn sample_minibatch(n: usize, batch_size: usize, rng: &mut seed::Rng) -> Vec<usize> {
    if batch_size >= n {
        return (0..n).collect();
    }
    (0..batch_size).map(|_| rng.random_range(0..n)).collect()
}

/// `k` penalised Adam steps on replay mini-batches. Returns the number of
/// iterations run.
#[allow(clippy::too_many_arguments)]
pub fn train_embedding_step(
    fast: &mut WeightState,
    slow: &WeightState,
    spec: &NetworkSpec,
    gate: &[f64],
    replay: &LabeledBatch,
    cfg: &TscConfig,
    seed: u64,
) -> Result<usize> {
    if replay.is_empty() {
        return Err(Error::EmptyReplay);
    }
    if fast.layout != slow.layout {
        return Err(Error::LayoutMismatch("fast and slow weights differ in layout".into()));
    }
    let scope = if cfg.joint_step2 { Scope::All } else { Scope::EmbeddingOnly };
    let e = fast.layout.embedding_len();
    let mut opt = AdamState::new(fast.len(), cfg.adam);
    let mut rng = seed::rng(seed);
    for _ in 0..cfg.k {
        let idx = sample_minibatch(replay.len(), cfg.batch_size, &mut rng);
        let (_, mut grad) = nn::loss_and_grad(fast, spec, &replay.gather(&idx), scope)?;
        let (_, pg) = stc_penalty(fast.embedding(), slow.embedding(), gate, cfg.lambda)?;
        for (g, p) in grad.values[..e].iter_mut().zip(&pg) {
            *g += p;
        }
        adam_step(fast, &grad, &mut opt)?;
    }
    Ok(cfg.k)
}

/// Head-only training with the embedding frozen, up to
/// `head_max_epochs` or until the loss plateaus.
pub fn train_output_head(
    fast: &mut WeightState,
    spec: &NetworkSpec,
    replay: &LabeledBatch,
    cfg: &TscConfig,
    seed: u64,
) -> Result<FitReport> {
    train::fit_head(fast, spec, replay, cfg.head_max_epochs, cfg.batch_size, cfg.adam, Some(cfg.plateau), seed)
}

/// `(1 - beta) slow + beta fast`. Output rows the slow weights lack take
/// the fast value.
pub fn consolidate_slow(slow: &WeightState, fast: &WeightState, beta: f64) -> Result<WeightState> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta must lie in [0, 1], got {beta}")));
    }
    let (aligned, present) = if slow.layout == fast.layout {
        (slow.values.clone(), vec![true; slow.len()])
    } else {
        let aligned = slow.layout.expand_vector(&slow.values, &fast.layout, 0.0)?;
        let ones = vec![1.0; slow.len()];
        let mask = slow.layout.expand_vector(&ones, &fast.layout, 0.0)?;
        (aligned, mask.iter().map(|m| *m == 1.0).collect())
    };
    let values = aligned
        .iter()
        .zip(&fast.values)
        .zip(&present)
        .map(|((&s, &f), &p)| {
            if !p || beta == 1.0 {
                f
            } else if beta == 0.0 {
                s
            } else {
                (1.0 - beta) * s + beta * f
            }
        })
        .collect();
    Ok(WeightState { values, layout: fast.layout.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TscTaskOutcome {
    pub record: MetricsRecord,
    /// Replay-buffer reads made while computing activity (expected 0).
    pub activity_replay_reads: u64,
    pub replay_len: usize,
    pub embedding_iterations: usize,
    pub head: FitReport,
}

/// One full task. `tests` are the test sets of tasks `1..=t`, used for
/// the evaluation of the fast weights.
pub fn run_tsc_task(
    state: &mut TscState,
    train_set: &TaskDataset,
    tests: &[TaskDataset],
    replay: &mut ReplayBuffer,
    cfg: &TscConfig,
    seed: u64,
) -> Result<TscTaskOutcome> {
    cfg.validate()?;
    train_set.validate()?;
    let t = state.task_index + 1;

    // (a) head rows for new classes on a working copy of the slow weights
    let slow_spec = state.slow_spec();
    state.classes.register(&train_set.class_ids());
    let grow_by = state.classes.len() - slow_spec.output_classes;
    let (slow_grown, spec) = if grow_by > 0 {
        nn::grow_output(&state.slow, &slow_spec, grow_by, 0.0, 0)?
    } else {
        (state.slow.clone(), slow_spec)
    };

    // (b) replay set
    replay.extend(train_set);

    // (c) tagging on the current task only
    let reads_before = replay.reads();
    let task_batch = state.classes.batch(&train_set.examples)?;
    let a_t = compute_activity(&slow_grown, &spec, &task_batch)?;
    update_cumulative(&mut state.activity, &a_t)?;
    state.activity.gate = compute_gate(&state.activity)?;
    let activity_replay_reads = replay.reads() - reads_before;

    // (d), (e) fast weights
    let mut fast = slow_grown.clone();
    let replay_batch = replay.batch(&state.classes)?;
    let embedding_iterations = train_embedding_step(
        &mut fast,
        &slow_grown,
        &spec,
        &state.activity.gate,
        &replay_batch,
        cfg,
        seed::derive_indexed(seed, "tsc-embedding", t as u64),
    )?;
    let head = train_output_head(&mut fast, &spec, &replay_batch, cfg, seed::derive_indexed(seed, "tsc-head", t as u64))?;

    // (f) slow update
    state.slow = consolidate_slow(&state.slow, &fast, cfg.beta)?;
    state.fast = fast;
    state.spec = spec;
    state.task_index = t;

    let eval = evalkit::evaluate_single_head(&state.fast, &state.spec, &state.classes, tests)?;
    let mut record = MetricsRecord::from_eval(t, &eval);
    record.confusion = Some(evalkit::confusion_matrix(&eval.predictions, &eval.labels, state.spec.output_classes)?);
    Ok(TscTaskOutcome {
        record,
        activity_replay_reads,
        replay_len: replay_batch.len(),
        embedding_iterations,
        head,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceStep {
    pub record: MetricsRecord,
    pub replay_len: usize,
    pub class_ids: Vec<usize>,
    pub probe: f64,
}

/// New-instance stream: each batch is learned with only itself as the
/// replay set. After every batch a probe head is fitted on a fixed fresh
/// batch of the same classes and scored on its test split (stored as
/// `probe_nc` in the record).
pub fn run_new_instance(
    state: &mut TscState,
    stream: &TaskStream,
    cfg: &TscConfig,
    probe: &ProbeConfig,
    seed: u64,
) -> Result<Vec<InstanceStep>> {
    if stream.config.mode != StreamMode::NewInstance {
        return Err(Error::ModeMismatch {
            expected: StreamMode::NewInstance.name(),
            actual: stream.config.mode.name(),
        });
    }
    let (probe_train, probe_test) = taskgen::sample_instance_probe(stream, seed::derive(seed, "instance-probe"))?;
    let no_leak_check = Default::default();
    let mut tests = Vec::new();
    let mut steps = Vec::new();
    let mut r = Vec::new();
    for t in 1..=stream.tasks() {
        let (train_set, test) = taskgen::sample_task(stream, t)?;
        tests.push(test);
        let mut replay = ReplayBuffer::new();
        let outcome = run_tsc_task(state, &train_set, &tests, &mut replay, cfg, seed)?;
        let from = cfg.probe_from;
        let acc = evalkit::run_probe(
            state.probe_weights(from),
            &state.probe_spec(from),
            &probe_train,
            &probe_test,
            &no_leak_check,
            probe,
            seed::derive(seed, "probe-fit"),
        )?;
        let mut record = outcome.record;
        r.push(record.per_task_accuracy.clone());
        if r.len() >= 2 {
            record.bwt = Some(evalkit::compute_bwt(&r)?);
        }
        record.probe_nc = Some(acc);
        steps.push(InstanceStep {
            record,
            replay_len: outcome.replay_len,
            class_ids: state.classes.ids().to_vec(),
            probe: acc,
        });
    }
    Ok(steps)
}
