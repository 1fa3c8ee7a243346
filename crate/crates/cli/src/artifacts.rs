//! Output files of a run directory.
//!
//! ```text
//! manifest.txt                 resolved configuration of every variant
//! streams/seed_<s>.json        generated stream (class means, task seeds)
//! metrics.csv                  one row per (seed, method, t), t = 0 is the pre-stream probe row
//! fisher.csv                   per-layer mean diagonal Fisher after each task
//! confusion.csv                confusion counts (long format)
//! failures.csv                 seeds that aborted, with the error
//! checkpoints/<method>/seed_<s>/task_<t>.json
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsc_core::nn::{NetworkCheckpoint, NetworkSpec, WeightState};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::experiment::{pretrain, RunState, SeedData};

pub const METRICS_COLUMNS: [&str; 9] = ["seed", "method", "t", "a_top1", "a_top5", "bwt", "probe_nc", "probe_bc", "wall_ms"];

/// One configuration to run over its seed list.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub config: RunConfig,
}

impl Variant {
    pub fn single(config: RunConfig) -> Self {
        Self { label: config.method_label(), config }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCheckpoint {
    /// Resolved configuration as `key = value` lines.
    pub config: String,
    pub state: RunState,
}

impl RunCheckpoint {
    pub fn save(&self, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(path, serde_json::to_string(self)?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn config(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(&self.config, "checkpoint")?;
        Ok(cfg)
    }
}

pub fn checkpoint_path(out: &Path, label: &str, seed: u64, t: usize) -> PathBuf {
    out.join("checkpoints")
        .join(sanitize(label))
        .join(format!("seed_{seed}"))
        .join(format!("task_{t}.json"))
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-=".contains(c) { c } else { '_' })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub seed: u64,
    pub label: String,
    pub error: String,
}

/// Completed runs and failures of an experiment.
#[derive(Debug, Default)]
pub struct Outcome {
    pub runs: Vec<RunState>,
    pub failures: Vec<Failure>,
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn metrics_header(tasks: usize) -> Vec<String> {
    METRICS_COLUMNS
        .iter()
        .map(|c| c.to_string())
        .chain((1..=tasks).map(|i| format!("r_{i}")))
        .collect()
}

pub fn metrics_rows(run: &RunState, tasks: usize) -> Vec<Vec<String>> {
    let mut rows = Vec::with_capacity(run.records.len() + 1);
    let mut first = vec![
        run.seed.to_string(),
        run.label.clone(),
        "0".into(),
        String::new(),
        String::new(),
        String::new(),
        opt(run.initial.nc),
        opt(run.initial.bc),
        String::new(),
    ];
    first.extend(std::iter::repeat_n(String::new(), tasks));
    rows.push(first);
    for r in &run.records {
        let mut row = vec![
            run.seed.to_string(),
            run.label.clone(),
            r.task_index.to_string(),
            r.a_top1.to_string(),
            r.a_top5.to_string(),
            opt(r.bwt),
            opt(r.probe_nc),
            opt(r.probe_bc),
            r.wall_ms.map(|m| m.to_string()).unwrap_or_default(),
        ];
        row.extend((0..tasks).map(|i| r.per_task_accuracy.get(i).map(|v| v.to_string()).unwrap_or_default()));
        rows.push(row);
    }
    rows
}

/// Writes every table for `outcome` into `out`.
pub fn write_tables(out: &Path, outcome: &Outcome, tasks: usize) -> CliResult<()> {
    let metrics: Vec<Vec<String>> = outcome.runs.iter().flat_map(|r| metrics_rows(r, tasks)).collect();
    write_csv(&out.join("metrics.csv"), &metrics_header(tasks), &metrics)?;

    let mut fisher = Vec::new();
    let mut confusion = Vec::new();
    for run in &outcome.runs {
        for r in &run.records {
            for (layer, mean) in r.fisher_layer_means.iter().flatten().enumerate() {
                fisher.push(vec![
                    run.seed.to_string(),
                    run.label.clone(),
                    r.task_index.to_string(),
                    (layer + 1).to_string(),
                    mean.to_string(),
                ]);
            }
            if let Some(c) = &r.confusion {
                let normalized = c.row_normalized();
                for y in 0..c.classes {
                    for p in 0..c.classes {
                        let count = c.get(y, p);
                        if count > 0 {
                            confusion.push(vec![
                                run.seed.to_string(),
                                run.label.clone(),
                                r.task_index.to_string(),
                                y.to_string(),
                                p.to_string(),
                                count.to_string(),
                                normalized[y][p].to_string(),
                            ]);
                        }
                    }
                }
            }
        }
    }
    let header = |cols: &[&str]| cols.iter().map(|c| c.to_string()).collect::<Vec<_>>();
    write_csv(&out.join("fisher.csv"), &header(&["seed", "method", "t", "layer", "mean_fisher"]), &fisher)?;
    write_csv(
        &out.join("confusion.csv"),
        &header(&["seed", "method", "t", "true_row", "pred_row", "count", "row_fraction"]),
        &confusion,
    )?;
    let failures: Vec<Vec<String>> = outcome
        .failures
        .iter()
        .map(|f| vec![f.seed.to_string(), f.label.clone(), f.error.clone()])
        .collect();
    write_csv(&out.join("failures.csv"), &header(&["seed", "method", "error"]), &failures)?;
    Ok(())
}

fn data_key(cfg: &RunConfig) -> String {
    cfg.echo()
        .lines()
        .filter(|l| ["stream.", "network.", "pretrain.", "probe."].iter().any(|p| l.starts_with(p)))
        .collect::<Vec<_>>()
        .join("\n")
}

type Prepared = (SeedData, (NetworkSpec, WeightState));

/// Runs every variant over its seeds, writing artifacts into `out`. A
/// failing seed is recorded and the others continue.
pub fn run_experiment(variants: &[Variant], out: &Path, pretrained: Option<&Path>) -> CliResult<Outcome> {
    if variants.is_empty() {
        return Err(CliError::Usage("nothing to run".into()));
    }
    for v in variants {
        v.config.validate()?;
    }
    fs::create_dir_all(out.join("streams")).map_err(|e| CliError::io(out, e))?;
    let manifest: String = variants
        .iter()
        .map(|v| format!("[{}]\n{}\n", v.label, v.config.echo()))
        .collect();
    fs::write(out.join("manifest.txt"), manifest).map_err(|e| CliError::io(out, e))?;

    let mut cache: HashMap<(String, u64), Prepared> = HashMap::new();
    let mut outcome = Outcome::default();
    for v in variants {
        let cfg = &v.config;
        for &seed in &cfg.run.seeds.0 {
            let key = (data_key(cfg), seed);
            let result = (|| -> CliResult<RunState> {
                if !cache.contains_key(&key) {
                    let data = SeedData::generate(cfg, seed)?;
                    let path = out.join("streams").join(format!("seed_{seed}.json"));
                    fs::write(&path, data.manifest().to_json()?).map_err(|e| CliError::io(&path, e))?;
                    let pre = match pretrained {
                        Some(dir) => load_pretrained(dir, seed)?,
                        None => pretrain(cfg, &data.pool, seed)?,
                    };
                    cache.insert(key.clone(), (data, pre));
                }
                let (data, (spec, weights)) = &cache[&key];
                let state = RunState::start(cfg, data, (spec, weights), &v.label)?;
                continue_run(cfg, data, state, out)
            })();
            match result {
                Ok(run) => outcome.runs.push(run),
                Err(e) => outcome.failures.push(Failure { seed, label: v.label.clone(), error: e.to_string() }),
            }
        }
    }
    let tasks = variants.iter().map(|v| v.config.stream.tasks).max().unwrap_or(0);
    write_tables(out, &outcome, tasks)?;
    Ok(outcome)
}

pub fn pretrained_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.json"))
}

fn load_pretrained(dir: &Path, seed: u64) -> CliResult<(NetworkSpec, WeightState)> {
    let ckpt = NetworkCheckpoint::load(&pretrained_path(dir, seed))?;
    let weights = ckpt.weights()?;
    Ok((ckpt.spec, weights))
}

/// Pretrains every seed and writes `seed_<s>.json` network checkpoints.
pub fn pretrain_all(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut written = Vec::new();
    for &seed in &cfg.run.seeds.0 {
        let (pool, _) = tsc_core::taskgen::make_generator(&cfg.stream_config(seed))?;
        let (spec, weights) = pretrain(cfg, &pool, seed)?;
        let path = pretrained_path(out, seed);
        NetworkCheckpoint::new(&spec, &weights, None)?.save(&path)?;
        written.push(path);
    }
    fs::write(out.join("manifest.txt"), cfg.echo()).map_err(|e| CliError::io(out, e))?;
    Ok(written)
}

fn continue_run(cfg: &RunConfig, data: &SeedData, state: RunState, out: &Path) -> CliResult<RunState> {
    let echo = cfg.echo();
    crate::experiment::run_seed(cfg, data, state, |s| {
        if cfg.run.checkpoints {
            let t = s.next_task - 1;
            RunCheckpoint { config: echo.clone(), state: s.clone() }.save(&checkpoint_path(out, &s.label, s.seed, t))?;
        }
        Ok(())
    })
}

/// Continues a checkpointed run to the end of its stream and writes the
/// tables for that single (method, seed) into `out`.
pub fn resume_experiment(checkpoint: &Path, out: &Path) -> CliResult<Outcome> {
    let ckpt = RunCheckpoint::load(checkpoint)?;
    let mut cfg = ckpt.config()?;
    cfg.run.stop_after = 0;
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let data = SeedData::generate(&cfg, ckpt.state.seed)?;
    let run = continue_run(&cfg, &data, ckpt.state, out)?;
    let outcome = Outcome { runs: vec![run], failures: vec![] };
    write_tables(out, &outcome, cfg.stream.tasks)?;
    Ok(outcome)
}
