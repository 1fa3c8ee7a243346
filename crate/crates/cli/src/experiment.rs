//! Per-seed execution: data generation, pretraining, task-by-task learning
//! with evaluation and probes, and checkpointable run state.

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tsc_core::baselines::{self, BaselineState, Method, ReplayBuffer};
use tsc_core::consolidation::{self, TscState};
use tsc_core::evalkit::{self, MetricsRecord};
use tsc_core::nn::{NetworkSpec, WeightState};
use tsc_core::seed;
use tsc_core::taskgen::{
    self, ClassIndex, ProbeSource, StreamManifest, StreamMode, SupportPool, TaskDataset, TaskStream,
};
use tsc_core::train;

use crate::config::{ConfusionMode, RunConfig};
use crate::error::{CliError, CliResult};

/// Everything a seed's runs share, regardless of method.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub pool: SupportPool,
    pub stream: TaskStream,
    pub tasks: Vec<(TaskDataset, TaskDataset)>,
    pub nc_probe: Option<(TaskDataset, TaskDataset)>,
    pub bc_probe: Option<(TaskDataset, TaskDataset)>,
    /// Classes a probe must not use.
    pub seen: HashSet<usize>,
}

impl SeedData {
    pub fn generate(cfg: &RunConfig, seed: u64) -> CliResult<Self> {
        let stream_cfg = cfg.stream_config(seed);
        let (pool, stream) = taskgen::make_generator(&stream_cfg)?;
        let tasks = (1..=stream_cfg.tasks)
            .map(|t| taskgen::sample_task(&stream, t))
            .collect::<Result<Vec<_>, _>>()?;
        let instance = stream_cfg.mode == StreamMode::NewInstance;
        let nc_probe = match (cfg.probe.nc, instance) {
            (false, _) => None,
            (true, true) => Some(taskgen::sample_instance_probe(&stream, seed::derive(seed, "probe-nc"))?),
            (true, false) => Some(taskgen::sample_probe_task(
                ProbeSource::NovelQuery,
                &stream,
                &pool,
                cfg.probe.ways,
                cfg.probe.shots,
                seed::derive(seed, "probe-nc"),
            )?),
        };
        let bc_probe = if cfg.probe.bc {
            Some(taskgen::sample_probe_task(
                ProbeSource::BaseSupport,
                &stream,
                &pool,
                cfg.probe.ways,
                cfg.probe.shots,
                seed::derive(seed, "probe-bc"),
            )?)
        } else {
            None
        };
        let seen = if instance { HashSet::new() } else { stream.class_ids() };
        Ok(Self { seed, pool, stream, tasks, nc_probe, bc_probe, seen })
    }

    pub fn manifest(&self) -> StreamManifest {
        StreamManifest::new(&self.pool, &self.stream)
    }
}

/// Supervised training of the embedding on the support pool; the support
/// head is discarded afterwards.
pub fn pretrain(cfg: &RunConfig, pool: &SupportPool, seed: u64) -> CliResult<(NetworkSpec, WeightState)> {
    if pool.is_empty() {
        return Err(CliError::Usage("pretraining needs a non-empty support pool".into()));
    }
    let spec = cfg
        .network_spec(seed::derive(seed, "network-init"))
        .with_output_classes(pool.classes.len());
    let mut weights = WeightState::init(&spec)?;
    if cfg.pretrain.epochs > 0 {
        let examples = pool.training_examples(cfg.pretrain.examples_per_class, seed::derive(seed, "pretrain-data"));
        let index = ClassIndex::from_ids(&pool.class_ids());
        let batch = index.batch(&examples)?;
        let adam = tsc_core::nn::AdamConfig { lr: cfg.pretrain.lr, ..cfg.adam };
        train::fit_full(
            &mut weights,
            &spec,
            &batch,
            cfg.pretrain.epochs,
            cfg.pretrain.batch_size,
            adam,
            seed::derive(seed, "pretrain-fit"),
            None,
            None,
        )?;
    }
    let (trunk, trunk_spec) = weights.without_head(&spec);
    Ok((trunk_spec, trunk))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Learner {
    Tsc(TscState),
    Baseline(BaselineState),
}

impl Learner {
    fn new(cfg: &RunConfig, spec: &NetworkSpec, weights: &WeightState) -> CliResult<Self> {
        Ok(match cfg.method.method {
            Method::Tsc => Learner::Tsc(TscState::new(spec, weights, &cfg.tsc_config())?),
            _ => Learner::Baseline(BaselineState::new(spec, weights)?),
        })
    }

    /// Weights and spec a probe starts from.
    pub fn probe_start(&self, cfg: &RunConfig) -> (WeightState, NetworkSpec) {
        match self {
            Learner::Tsc(s) => (s.probe_weights(cfg.tsc.probe_from).clone(), s.probe_spec(cfg.tsc.probe_from)),
            Learner::Baseline(b) => (b.weights.clone(), b.spec.clone()),
        }
    }

    pub fn eval_weights(&self) -> (&WeightState, &NetworkSpec, &ClassIndex) {
        match self {
            Learner::Tsc(s) => (&s.fast, &s.spec, &s.classes),
            Learner::Baseline(b) => (&b.weights, &b.spec, &b.classes),
        }
    }
}

/// Probe accuracies before the first task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialProbes {
    pub nc: Option<f64>,
    pub bc: Option<f64>,
}

/// Resumable state of one (variant, seed) run at a task boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub label: String,
    pub seed: u64,
    pub next_task: usize,
    pub learner: Learner,
    pub replay: ReplayBuffer,
    pub accuracy: Vec<Vec<f64>>,
    pub initial: InitialProbes,
    pub records: Vec<MetricsRecord>,
}

fn probes(cfg: &RunConfig, data: &SeedData, learner: &Learner) -> CliResult<(Option<f64>, Option<f64>)> {
    let probe_cfg = cfg.probe_config();
    let (start, spec) = learner.probe_start(cfg);
    let run = |pair: &Option<(TaskDataset, TaskDataset)>, tag: &str| -> CliResult<Option<f64>> {
        match pair {
            None => Ok(None),
            Some((train, test)) => Ok(Some(evalkit::run_probe(
                &start,
                &spec,
                train,
                test,
                &data.seen,
                &probe_cfg,
                seed::derive(data.seed, tag),
            )?)),
        }
    };
    Ok((run(&data.nc_probe, "probe-nc-fit")?, run(&data.bc_probe, "probe-bc-fit")?))
}

impl RunState {
    pub fn start(
        cfg: &RunConfig,
        data: &SeedData,
        pretrained: (&NetworkSpec, &WeightState),
        label: &str,
    ) -> CliResult<Self> {
        let learner = Learner::new(cfg, pretrained.0, pretrained.1)?;
        let (nc, bc) = probes(cfg, data, &learner)?;
        Ok(Self {
            label: label.to_string(),
            seed: data.seed,
            next_task: 1,
            learner,
            replay: ReplayBuffer::new(),
            accuracy: Vec::new(),
            initial: InitialProbes { nc, bc },
            records: Vec::new(),
        })
    }

    pub fn finished(&self, data: &SeedData) -> bool {
        self.next_task > data.tasks.len()
    }

    /// Learns and evaluates the next task.
    pub fn step(&mut self, cfg: &RunConfig, data: &SeedData) -> CliResult<()> {
        let t = self.next_task;
        let (train_set, _) = data
            .tasks
            .get(t - 1)
            .ok_or_else(|| CliError::Usage(format!("task {t} beyond the stream")))?;
        let tests: Vec<TaskDataset> = data.tasks[..t].iter().map(|(_, test)| test.clone()).collect();
        let clock = Instant::now();
        let instance = cfg.stream.mode == StreamMode::NewInstance;
        if instance && cfg.method.method != Method::Jt {
            self.replay = ReplayBuffer::new();
        }
        let mut record = match &mut self.learner {
            Learner::Tsc(state) => {
                let seed = seed::derive(data.seed, "tsc");
                consolidation::run_tsc_task(state, train_set, &tests, &mut self.replay, &cfg.tsc_config(), seed)?.record
            }
            Learner::Baseline(state) => {
                let seed = seed::derive(data.seed, "baseline");
                baselines::train_baseline_task(state, &cfg.method_config(), train_set, &mut self.replay, seed)?;
                let eval = evalkit::evaluate_single_head(&state.weights, &state.spec, &state.classes, &tests)?;
                let mut record = MetricsRecord::from_eval(t, &eval);
                record.confusion =
                    Some(evalkit::confusion_matrix(&eval.predictions, &eval.labels, state.spec.output_classes)?);
                record
            }
        };
        let keep_confusion = match cfg.eval.confusion {
            ConfusionMode::None => false,
            ConfusionMode::Final => t == data.tasks.len(),
            ConfusionMode::All => true,
        };
        if !keep_confusion {
            record.confusion = None;
        }
        if cfg.eval.fisher {
            let (weights, spec, classes) = self.learner.eval_weights();
            let batch = classes.batch(&train_set.examples)?;
            record.fisher_layer_means = Some(evalkit::fisher_trace_report(weights, spec, &batch)?);
        }
        self.accuracy.push(record.per_task_accuracy.clone());
        if self.accuracy.len() >= 2 {
            record.bwt = Some(evalkit::compute_bwt(&self.accuracy)?);
        }
        let (nc, bc) = probes(cfg, data, &self.learner)?;
        record.probe_nc = nc;
        record.probe_bc = bc;
        if cfg.run.timing {
            record.wall_ms = Some(clock.elapsed().as_millis() as u64);
        }
        self.records.push(record);
        self.next_task += 1;
        Ok(())
    }
}

/// Runs one seed to the end of the stream (or `run.stop_after`),
/// calling `on_boundary` after every task.
pub fn run_seed<F>(cfg: &RunConfig, data: &SeedData, mut state: RunState, mut on_boundary: F) -> CliResult<RunState>
where
    F: FnMut(&RunState) -> CliResult<()>,
{
    let last = match cfg.run.stop_after {
        0 => data.tasks.len(),
        n => n.min(data.tasks.len()),
    };
    while state.next_task <= last {
        state.step(cfg, data)?;
        on_boundary(&state)?;
    }
    Ok(state)
}
