//! Reference strategies on the same network and stream: joint training
//! (JT), sequential training (ST), memory replay (MR), and replay combined
//! with a quadratic penalty whose per-parameter coefficients are constant
//! (CP), the empirical Fisher (EWC-M), MAS importance (MAS-M) or the SI
//! path integral (SI-M).
//!
//! Penalised methods use `reg_strength * sum_i c_i (theta_i - theta*_i)^2`
//! with `theta*` the weights at the start of the current task and `c`
//! accumulated additively over tasks.

mod importance;
mod replay;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use importance::{
    accumulate_si, estimate_fisher, estimate_mas, mean_squared_gradients, ImportanceKind, ImportanceMap, SiTracker,
};
pub use replay::{ReplayBuffer, ReplayEntry};

use crate::error::{Error, Result};
use crate::evalkit::{self, MetricsRecord};
use crate::nn::{self, AdamConfig, NetworkSpec, WeightState};
use crate::seed;
use crate::taskgen::{ClassIndex, TaskDataset};
use crate::train::{self, QuadraticPenalty};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Jt,
    St,
    Mr,
    Cp,
    EwcM,
    MasM,
    SiM,
    Tsc,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Jt,
        Method::St,
        Method::Mr,
        Method::Cp,
        Method::EwcM,
        Method::MasM,
        Method::SiM,
        Method::Tsc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Jt => "jt",
            Method::St => "st",
            Method::Mr => "mr",
            Method::Cp => "cp",
            Method::EwcM => "ewc_m",
            Method::MasM => "mas_m",
            Method::SiM => "si_m",
            Method::Tsc => "tsc",
        }
    }

    pub fn uses_replay(self) -> bool {
        !matches!(self, Method::St)
    }

    pub fn importance(self) -> Option<ImportanceKind> {
        match self {
            Method::Cp => Some(ImportanceKind::Constant),
            Method::EwcM => Some(ImportanceKind::Fisher),
            Method::MasM => Some(ImportanceKind::Mas),
            Method::SiM => Some(ImportanceKind::Si),
            _ => None,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    pub reg_strength: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// SI damping `xi`.
    pub si_damping: f64,
    /// Extend the penalty to the output head.
    pub penalize_head: bool,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            method: Method::Mr,
            reg_strength: 1.0,
            epochs: 30,
            batch_size: 25,
            adam: AdamConfig::default(),
            si_damping: 0.1,
            penalize_head: false,
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reg_strength >= 0.0) {
            return Err(Error::InvalidArgument("reg_strength must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if self.method == Method::Tsc {
            return Err(Error::InvalidArgument("tsc is not a baseline method".into()));
        }
        Ok(())
    }
}

/// Learner state shared by every baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub spec: NetworkSpec,
    pub weights: WeightState,
    /// Starting weights (head removed); joint training restarts from here.
    pub initial: WeightState,
    pub classes: ClassIndex,
    /// Accumulated penalty coefficients, aligned with `weights`.
    pub importance: Option<Vec<f64>>,
    pub task_index: usize,
}

impl BaselineState {
    pub fn new(spec: &NetworkSpec, weights: &WeightState) -> Result<Self> {
        weights.check_spec(spec)?;
        let (initial, spec) = weights.without_head(spec);
        Ok(Self {
            spec,
            weights: initial.clone(),
            initial,
            classes: ClassIndex::new(),
            importance: None,
            task_index: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTaskReport {
    pub examples_used: usize,
    pub final_loss: Option<f64>,
}

fn grow_to(weights: &WeightState, spec: &NetworkSpec, classes: usize) -> Result<(WeightState, NetworkSpec)> {
    if classes == spec.output_classes {
        return Ok((weights.clone(), spec.clone()));
    }
    nn::grow_output(weights, spec, classes - spec.output_classes, 0.0, 0)
}

fn penalty_mask(layout: &nn::Layout, penalize_head: bool) -> Vec<f64> {
    let mut mask = vec![1.0; layout.len()];
    if !penalize_head {
        mask[layout.embedding_len()..].iter_mut().for_each(|v| *v = 0.0);
    }
    mask
}

/// Learns task `train` with the configured baseline. Replay methods add the
/// task to `replay` first; sequential training never touches it.
pub fn train_baseline_task(
    state: &mut BaselineState,
    cfg: &MethodConfig,
    train: &TaskDataset,
    replay: &mut ReplayBuffer,
    seed: u64,
) -> Result<BaselineTaskReport> {
    cfg.validate()?;
    train.validate()?;
    let t = state.task_index + 1;
    let old_layout = state.weights.layout.clone();
    state.classes.register(&train.class_ids());
    let (weights, spec) = if cfg.method == Method::Jt {
        let (initial_trunk, trunk_spec) = state.initial.without_head(&state.spec);
        grow_to(&initial_trunk, &trunk_spec, state.classes.len())?
    } else {
        grow_to(&state.weights, &state.spec, state.classes.len())?
    };
    state.weights = weights;
    state.spec = spec;

    let data = if cfg.method.uses_replay() {
        replay.extend(train);
        replay.batch(&state.classes)?
    } else {
        state.classes.batch(&train.examples)?
    };

    let kind = cfg.method.importance();
    let penalty = match kind {
        None => None,
        Some(kind) => {
            let mask = penalty_mask(&state.weights.layout, cfg.penalize_head);
            let coefficients = match kind {
                ImportanceKind::Constant => mask,
                _ => {
                    let acc = match &state.importance {
                        Some(v) => old_layout.expand_vector(v, &state.weights.layout, 0.0)?,
                        None => vec![0.0; state.weights.len()],
                    };
                    acc.iter().zip(&mask).map(|(c, m)| c * m).collect()
                }
            };
            Some(QuadraticPenalty {
                strength: cfg.reg_strength,
                coefficients,
                anchor: state.weights.values.clone(),
            })
        }
    };

    let fit_seed = seed::derive_indexed(seed, "baseline-fit", t as u64);
    let mut tracker = (kind == Some(ImportanceKind::Si)).then(|| SiTracker::new(&state.weights.values));
    let final_loss = {
        let mut record = |g: &[f64], d: &[f64]| {
            if let Some(tr) = tracker.as_mut() {
                tr.record(g, d);
            }
        };
        let observer: Option<train::StepObserver<'_>> = if kind == Some(ImportanceKind::Si) { Some(&mut record) } else { None };
        train::fit_full(
            &mut state.weights,
            &state.spec,
            &data,
            cfg.epochs,
            cfg.batch_size,
            cfg.adam,
            fit_seed,
            penalty.as_ref(),
            observer,
        )?
    };

    if let Some(kind) = kind {
        let task_data = state.classes.batch(&train.examples)?;
        let fresh = match kind {
            ImportanceKind::Constant => None,
            ImportanceKind::Fisher => Some(estimate_fisher(&state.weights, &state.spec, &task_data)?.values),
            ImportanceKind::Mas => Some(estimate_mas(&state.weights, &state.spec, &task_data)?.values),
            ImportanceKind::Si => Some(
                tracker
                    .as_ref()
                    .expect("tracker exists for SI")
                    .finish(&state.weights.values, cfg.si_damping)?,
            ),
        };
        if let Some(fresh) = fresh {
            let mut acc = match &state.importance {
                Some(v) => old_layout.expand_vector(v, &state.weights.layout, 0.0)?,
                None => vec![0.0; state.weights.len()],
            };
            acc.iter_mut().zip(&fresh).for_each(|(a, f)| *a += f);
            state.importance = Some(acc);
        }
    }
    state.task_index = t;
    Ok(BaselineTaskReport { examples_used: data.len(), final_loss })
}

/// Runs a baseline over `(train, test)` task pairs and evaluates after
/// every task.
pub fn run_baseline(
    state: &mut BaselineState,
    cfg: &MethodConfig,
    tasks: &[(TaskDataset, TaskDataset)],
    seed: u64,
) -> Result<Vec<MetricsRecord>> {
    let mut replay = ReplayBuffer::new();
    let mut records = Vec::with_capacity(tasks.len());
    let mut r = Vec::new();
    for (i, (train, _)) in tasks.iter().enumerate() {
        train_baseline_task(state, cfg, train, &mut replay, seed)?;
        let tests: Vec<TaskDataset> = tasks[..=i].iter().map(|(_, test)| test.clone()).collect();
        let eval = evalkit::evaluate_single_head(&state.weights, &state.spec, &state.classes, &tests)?;
        let mut record = MetricsRecord::from_eval(i + 1, &eval);
        r.push(eval.per_task);
        if r.len() >= 2 {
            record.bwt = Some(evalkit::compute_bwt(&r)?);
        }
        records.push(record);
    }
    Ok(records)
}

fn run_checked(
    expected: &[Method],
    state: &mut BaselineState,
    cfg: &MethodConfig,
    tasks: &[(TaskDataset, TaskDataset)],
    seed: u64,
) -> Result<Vec<MetricsRecord>> {
    if !expected.contains(&cfg.method) {
        return Err(Error::InvalidArgument(format!("method {} not valid here", cfg.method.name())));
    }
    run_baseline(state, cfg, tasks, seed)
}

/// JT: at every step, retrain from the starting weights on all tasks so far.
pub fn run_joint_training(
    state: &mut BaselineState,
    cfg: &MethodConfig,
    tasks: &[(TaskDataset, TaskDataset)],
    seed: u64,
) -> Result<Vec<MetricsRecord>> {
    run_checked(&[Method::Jt], state, cfg, tasks, seed)
}

pub fn run_sequential(
    state: &mut BaselineState,
    cfg: &MethodConfig,
    tasks: &[(TaskDataset, TaskDataset)],
    seed: u64,
) -> Result<Vec<MetricsRecord>> {
    run_checked(&[Method::St], state, cfg, tasks, seed)
}

pub fn run_memory_replay(
    state: &mut BaselineState,
    cfg: &MethodConfig,
    tasks: &[(TaskDataset, TaskDataset)],
    seed: u64,
) -> Result<Vec<MetricsRecord>> {
    run_checked(&[Method::Mr], state, cfg, tasks, seed)
}

pub fn run_regularized_replay(
    state: &mut BaselineState,
    cfg: &MethodConfig,
    tasks: &[(TaskDataset, TaskDataset)],
    seed: u64,
) -> Result<Vec<MetricsRecord>> {
    run_checked(&[Method::Cp, Method::EwcM, Method::MasM, Method::SiM], state, cfg, tasks, seed)
}
