//! Synthetic N-way K-shot task streams and support pools.
//!
//! Classes are isotropic Gaussian clusters. Support-pool class means are
//! drawn from `N(0, class_spread^2 I)`. A query class mean blends a draw
//! from that same region with a draw from a displaced copy of it:
//!
//! ```text
//! mean = (1 - shift) * g1 + shift * (g2 + 2 * class_spread * u)
//! ```
//!
//! where `g1, g2 ~ N(0, class_spread^2 I)` and `u` is a seeded unit vector.
//! `shift = 0` makes support and query classes identically distributed.
//!
//! Class ids are global and disjoint: support classes come first, then the
//! query classes used by the stream, then a reserve of unseen query-region
//! classes for novel-class probes.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LabeledBatch, Matrix};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Support,
    Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub class_id: usize,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_index: usize,
    pub ways: usize,
    pub shots: usize,
    pub examples: Vec<LabeledExample>,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Distinct class ids in order of first appearance.
    pub fn class_ids(&self) -> Vec<usize> {
        let mut seen = HashSet::new();
        self.examples
            .iter()
            .filter(|e| seen.insert(e.class_id))
            .map(|e| e.class_id)
            .collect()
    }

    /// Checks the N-way K-shot shape: exactly `ways` classes with `shots`
    /// examples each.
    pub fn validate(&self) -> Result<()> {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for e in &self.examples {
            if e.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("task features"));
            }
            *counts.entry(e.class_id).or_default() += 1;
        }
        if counts.len() != self.ways {
            return Err(Error::InvalidArgument(format!(
                "task {} has {} classes, expected {}",
                self.task_index,
                counts.len(),
                self.ways
            )));
        }
        if let Some((id, n)) = counts.iter().find(|(_, &n)| n != self.shots) {
            return Err(Error::InvalidArgument(format!(
                "task {} class {id} has {n} examples, expected {}",
                self.task_index, self.shots
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamMode {
    NewClass,
    NewInstance,
}

impl StreamMode {
    pub fn name(self) -> &'static str {
        match self {
            StreamMode::NewClass => "new-class",
            StreamMode::NewInstance => "new-instance",
        }
    }
}

impl std::str::FromStr for StreamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "new-class" | "new_class" => Ok(StreamMode::NewClass),
            "new-instance" | "new_instance" => Ok(StreamMode::NewInstance),
            other => Err(Error::InvalidArgument(format!("unknown stream mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub tasks: usize,
    pub ways: usize,
    pub shots: usize,
    pub test_shots: usize,
    pub mode: StreamMode,
    pub input_dim: usize,
    pub shift: f64,
    pub class_spread: f64,
    pub within_class_noise: f64,
    pub support_classes: usize,
    pub probe_classes: usize,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            tasks: 10,
            ways: 5,
            shots: 5,
            test_shots: 50,
            mode: StreamMode::NewClass,
            input_dim: 20,
            shift: 0.3,
            class_spread: 1.0,
            within_class_noise: 0.7,
            support_classes: 100,
            probe_classes: 20,
            seed: 0,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tasks", self.tasks),
            ("ways", self.ways),
            ("shots", self.shots),
            ("test_shots", self.test_shots),
            ("input_dim", self.input_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("stream.{name} must be positive")));
        }
        if !(0.0..=1.0).contains(&self.shift) {
            return Err(Error::InvalidArgument(format!("stream.shift must be in [0,1], got {}", self.shift)));
        }
        if !(self.class_spread > 0.0 && self.class_spread.is_finite()) {
            return Err(Error::InvalidArgument("stream.class_spread must be positive".into()));
        }
        if !(self.within_class_noise >= 0.0 && self.within_class_noise.is_finite()) {
            return Err(Error::InvalidArgument("stream.within_class_noise must be >= 0".into()));
        }
        Ok(())
    }

    /// Number of query classes the stream itself consumes.
    pub fn stream_classes(&self) -> usize {
        match self.mode {
            StreamMode::NewClass => self.tasks * self.ways,
            StreamMode::NewInstance => self.ways,
        }
    }
}

/// Isotropic Gaussian class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSampler {
    pub class_id: usize,
    pub mean: Vec<f64>,
    pub noise: f64,
    pub origin: Origin,
}

impl ClassSampler {
    pub fn draw(&self, rng: &mut Rng) -> LabeledExample {
        let features = self
            .mean
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.noise * z
            })
            .collect();
        LabeledExample {
            features,
            class_id: self.class_id,
            origin: self.origin,
        }
    }

    fn draw_many(&self, n: usize, rng: &mut Rng) -> Vec<LabeledExample> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassSource {
    Gaussian(ClassSampler),
    /// A fixed set of feature vectors, e.g. loaded from CSV.
    Fixed(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolClass {
    pub class_id: usize,
    pub source: ClassSource,
}

/// Base classes used only for pretraining and base-class probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPool {
    pub input_dim: usize,
    pub classes: Vec<PoolClass>,
}

impl SupportPool {
    pub fn class_ids(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.class_id).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Training examples for pretraining: `per_class` fresh draws for
    /// generated classes, every stored example for fixed ones.
    pub fn training_examples(&self, per_class: usize, seed: u64) -> Vec<LabeledExample> {
        let mut rng = seed::rng(seed);
        let mut out = Vec::new();
        for class in &self.classes {
            match &class.source {
                ClassSource::Gaussian(s) => out.extend(s.draw_many(per_class, &mut rng)),
                ClassSource::Fixed(rows) => out.extend(rows.iter().map(|f| LabeledExample {
                    features: f.clone(),
                    class_id: class.class_id,
                    origin: Origin::Support,
                })),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub config: StreamConfig,
    /// Unit vector along which the query region is displaced.
    pub direction: Vec<f64>,
    pub query_classes: Vec<ClassSampler>,
    pub probe_reserve: Vec<ClassSampler>,
}

impl TaskStream {
    pub fn tasks(&self) -> usize {
        self.config.tasks
    }

    /// Class samplers used by task `t` (1-based).
    pub fn task_classes(&self, t: usize) -> Result<&[ClassSampler]> {
        let cfg = &self.config;
        if t == 0 || t > cfg.tasks {
            return Err(Error::TaskOutOfRange { t, tasks: cfg.tasks });
        }
        Ok(match cfg.mode {
            StreamMode::NewClass => &self.query_classes[(t - 1) * cfg.ways..t * cfg.ways],
            StreamMode::NewInstance => &self.query_classes[..cfg.ways],
        })
    }

    pub fn class_ids(&self) -> HashSet<usize> {
        self.query_classes.iter().map(|c| c.class_id).collect()
    }
}

fn gaussian_vec(dim: usize, scale: f64, rng: &mut Rng) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn query_mean(cfg: &StreamConfig, direction: &[f64], rng: &mut Rng) -> Vec<f64> {
    let near = gaussian_vec(cfg.input_dim, cfg.class_spread, rng);
    let far = gaussian_vec(cfg.input_dim, cfg.class_spread, rng);
    let offset = 2.0 * cfg.class_spread;
    near.iter()
        .zip(&far)
        .zip(direction)
        .map(|((a, b), u)| (1.0 - cfg.shift) * a + cfg.shift * (b + offset * u))
        .collect()
}

/// Builds the support pool and the query stream described by `config`.
pub fn make_generator(config: &StreamConfig) -> Result<(SupportPool, TaskStream)> {
    config.validate()?;
    let mut dir_rng = seed::rng(seed::derive(config.seed, "shift-direction"));
    let mut direction = gaussian_vec(config.input_dim, 1.0, &mut dir_rng);
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);

    let mut support_rng = seed::rng(seed::derive(config.seed, "support-classes"));
    let support = SupportPool {
        input_dim: config.input_dim,
        classes: (0..config.support_classes)
            .map(|id| PoolClass {
                class_id: id,
                source: ClassSource::Gaussian(ClassSampler {
                    class_id: id,
                    mean: gaussian_vec(config.input_dim, config.class_spread, &mut support_rng),
                    noise: config.within_class_noise,
                    origin: Origin::Support,
                }),
            })
            .collect(),
    };

    let mut query_rng = seed::rng(seed::derive(config.seed, "query-classes"));
    let first_query = config.support_classes;
    let query_classes: Vec<_> = (0..config.stream_classes())
        .map(|i| ClassSampler {
            class_id: first_query + i,
            mean: query_mean(config, &direction, &mut query_rng),
            noise: config.within_class_noise,
            origin: Origin::Query,
        })
        .collect();

    let mut probe_rng = seed::rng(seed::derive(config.seed, "probe-classes"));
    let first_probe = first_query + query_classes.len();
    let probe_reserve = (0..config.probe_classes)
        .map(|i| ClassSampler {
            class_id: first_probe + i,
            mean: query_mean(config, &direction, &mut probe_rng),
            noise: config.within_class_noise,
            origin: Origin::Query,
        })
        .collect();

    Ok((
        support,
        TaskStream {
            config: config.clone(),
            direction,
            query_classes,
            probe_reserve,
        },
    ))
}

fn draw_task(task_index: usize, classes: &[ClassSampler], shots: usize, rng: &mut Rng) -> TaskDataset {
    TaskDataset {
        task_index,
        ways: classes.len(),
        shots,
        examples: classes.iter().flat_map(|c| c.draw_many(shots, rng)).collect(),
    }
}

/// Train (K shots per class) and test (`test_shots` per class) splits of
/// task `t`, both fresh draws keyed by `(seed, t)`.
pub fn sample_task(stream: &TaskStream, t: usize) -> Result<(TaskDataset, TaskDataset)> {
    let classes = stream.task_classes(t)?;
    let cfg = &stream.config;
    let mut train_rng = seed::rng(seed::derive_indexed(cfg.seed, "task-train", t as u64));
    let mut test_rng = seed::rng(seed::derive_indexed(cfg.seed, "task-test", t as u64));
    Ok((
        draw_task(t, classes, cfg.shots, &mut train_rng),
        draw_task(t, classes, cfg.test_shots, &mut test_rng),
    ))
}

/// A fresh batch of instances of the stream's fixed classes (new-instance
/// mode), with a test split.
pub fn sample_instance_probe(stream: &TaskStream, seed: u64) -> Result<(TaskDataset, TaskDataset)> {
    let classes = stream.task_classes(1)?;
    let cfg = &stream.config;
    let mut rng = seed::rng(seed);
    let train = draw_task(0, classes, cfg.shots, &mut rng);
    let test = draw_task(0, classes, cfg.test_shots, &mut rng);
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSource {
    NovelQuery,
    BaseSupport,
}

/// A fresh N-way K-shot train/test pair outside the stream: novel
/// query-region classes from the probe reserve, or support-pool classes.
/// Probe tasks carry `task_index = 0`.
pub fn sample_probe_task(
    source: ProbeSource,
    stream: &TaskStream,
    pool: &SupportPool,
    ways: usize,
    shots: usize,
    seed: u64,
) -> Result<(TaskDataset, TaskDataset)> {
    let test_shots = stream.config.test_shots;
    let mut rng = seed::rng(seed);
    match source {
        ProbeSource::NovelQuery => {
            let available = stream.probe_reserve.len();
            if ways > available {
                return Err(Error::ClassSupplyExhausted { requested: ways, available });
            }
            let mut picks: Vec<&ClassSampler> = stream.probe_reserve.iter().collect();
            picks.shuffle(&mut rng);
            let chosen: Vec<ClassSampler> = picks[..ways].iter().map(|c| (*c).clone()).collect();
            let train = draw_task(0, &chosen, shots, &mut rng);
            let test = draw_task(0, &chosen, test_shots, &mut rng);
            Ok((train, test))
        }
        ProbeSource::BaseSupport => {
            let available = pool.classes.len();
            if ways > available {
                return Err(Error::ClassSupplyExhausted { requested: ways, available });
            }
            let mut picks: Vec<&PoolClass> = pool.classes.iter().collect();
            picks.shuffle(&mut rng);
            let mut train = TaskDataset { task_index: 0, ways, shots, examples: vec![] };
            let mut test = TaskDataset { task_index: 0, ways, shots: test_shots, examples: vec![] };
            for class in &picks[..ways] {
                match &class.source {
                    ClassSource::Gaussian(s) => {
                        train.examples.extend(s.draw_many(shots, &mut rng));
                        test.examples.extend(s.draw_many(test_shots, &mut rng));
                    }
                    ClassSource::Fixed(rows) => {
                        if rows.len() <= shots {
                            return Err(Error::ClassSupplyExhausted {
                                requested: shots + 1,
                                available: rows.len(),
                            });
                        }
                        let mut order: Vec<usize> = (0..rows.len()).collect();
                        order.shuffle(&mut rng);
                        let held_out = (rows.len() - shots).min(test_shots);
                        let to_example = |i: &usize| LabeledExample {
                            features: rows[*i].clone(),
                            class_id: class.class_id,
                            origin: Origin::Support,
                        };
                        train.examples.extend(order[..shots].iter().map(to_example));
                        test.examples.extend(order[shots..shots + held_out].iter().map(to_example));
                        test.shots = test.shots.min(held_out);
                    }
                }
            }
            Ok((train, test))
        }
    }
}

/// Per-class example counts of a loaded dataset, in order of first
/// appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTable {
    pub entries: Vec<(usize, usize)>,
}

/// Reads `class_id,feat_0,...,feat_{d-1}` rows (one header line) into a
/// support pool of fixed classes.
pub fn load_csv_dataset(path: &Path) -> Result<(SupportPool, ClassTable)> {
    let shown = path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: shown.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let mut records = reader.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "missing header".into())),
    };
    let dim = header.len().saturating_sub(1);
    let header_ok = dim >= 1
        && &header[0] == "class_id"
        && (0..dim).all(|i| header[i + 1] == *format!("feat_{i}"));
    if !header_ok {
        return Err(parse_err(
            1,
            format!("unknown header `{}`; expected class_id,feat_0,...", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    let mut order: Vec<usize> = Vec::new();
    let mut rows: HashMap<usize, Vec<Vec<f64>>> = HashMap::new();
    for (i, record) in records.enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != dim + 1 {
            return Err(parse_err(line, format!("expected {} fields, found {}", dim + 1, record.len())));
        }
        let class_id: usize = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("class_id `{}` is not a non-negative integer", &record[0])))?;
        let mut features = Vec::with_capacity(dim);
        for (j, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("feat_{j} `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("feat_{j} is not finite")));
            }
            features.push(v);
        }
        let entry = rows.entry(class_id).or_insert_with(|| {
            order.push(class_id);
            Vec::new()
        });
        entry.push(features);
    }
    if order.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }

    let mut classes = Vec::with_capacity(order.len());
    let mut entries = Vec::with_capacity(order.len());
    for id in order {
        let examples = rows.remove(&id).unwrap_or_default();
        entries.push((id, examples.len()));
        classes.push(PoolClass {
            class_id: id,
            source: ClassSource::Fixed(examples),
        });
    }
    Ok((SupportPool { input_dim: dim, classes }, ClassTable { entries }))
}

/// Maps global class ids to output-head rows in registration order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClassIndex {
    ids: Vec<usize>,
    #[serde(skip)]
    rows: HashMap<usize, usize>,
}

impl ClassIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids(ids: &[usize]) -> Self {
        let mut index = Self::new();
        index.register(ids);
        index
    }

    /// Registers unseen ids; returns how many were new.
    pub fn register(&mut self, ids: &[usize]) -> usize {
        self.rebuild_if_needed();
        let before = self.ids.len();
        for &id in ids {
            if !self.rows.contains_key(&id) {
                self.rows.insert(id, self.ids.len());
                self.ids.push(id);
            }
        }
        self.ids.len() - before
    }

    fn rebuild_if_needed(&mut self) {
        // The lookup table is not serialised; rebuild it after loading.
        if self.rows.len() != self.ids.len() {
            self.rows = self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn contains(&self, class_id: usize) -> bool {
        self.ids.contains(&class_id)
    }

    pub fn row_of(&self, class_id: usize) -> Result<usize> {
        if self.rows.len() == self.ids.len() {
            self.rows.get(&class_id).copied()
        } else {
            self.ids.iter().position(|&id| id == class_id)
        }
        .ok_or(Error::ClassNotInHead { class_id })
    }

    pub fn batch<'a, I>(&self, examples: I) -> Result<LabeledBatch>
    where
        I: IntoIterator<Item = &'a LabeledExample>,
    {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for e in examples {
            labels.push(self.row_of(e.class_id)?);
            rows.push(e.features.as_slice());
        }
        LabeledBatch::new(Matrix::from_rows(&rows)?, labels)
    }
}

impl PartialEq for ClassIndex {
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids
    }
}

impl Eq for ClassIndex {}

/// Audit record of a generated stream: configuration, derived seeds and
/// class parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub config: StreamConfig,
    pub direction: Vec<f64>,
    pub task_seeds: Vec<(usize, u64, u64)>,
    pub support_means: Vec<(usize, Vec<f64>)>,
    pub query_classes: Vec<ClassSampler>,
    pub probe_reserve: Vec<ClassSampler>,
}

impl StreamManifest {
    pub fn new(pool: &SupportPool, stream: &TaskStream) -> Self {
        let cfg = &stream.config;
        Self {
            config: cfg.clone(),
            direction: stream.direction.clone(),
            task_seeds: (1..=cfg.tasks)
                .map(|t| {
                    (
                        t,
                        seed::derive_indexed(cfg.seed, "task-train", t as u64),
                        seed::derive_indexed(cfg.seed, "task-test", t as u64),
                    )
                })
                .collect(),
            support_means: pool
                .classes
                .iter()
                .filter_map(|c| match &c.source {
                    ClassSource::Gaussian(s) => Some((c.class_id, s.mean.clone())),
                    ClassSource::Fixed(_) => None,
                })
                .collect(),
            query_classes: stream.query_classes.clone(),
            probe_reserve: stream.probe_reserve.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn cfg() -> StreamConfig {
        StreamConfig {
            input_dim: 4,
            support_classes: 12,
            ..StreamConfig::default()
        }
    }

    #[test]
    fn new_class_stream_has_disjoint_ids() {
        let (pool, stream) = make_generator(&cfg()).unwrap();
        assert_eq!(stream.class_ids().len(), 50);
        let support: HashSet<_> = pool.class_ids().into_iter().collect();
        let reserve: HashSet<_> = stream.probe_reserve.iter().map(|c| c.class_id).collect();
        assert!(support.is_disjoint(&stream.class_ids()));
        assert!(reserve.is_disjoint(&stream.class_ids()));
        assert!(reserve.is_disjoint(&support));
        let mut seen = HashSet::new();
        for t in 1..=10 {
            let (train, _) = sample_task(&stream, t).unwrap();
            for id in train.class_ids() {
                assert!(seen.insert(id), "class {id} reused");
            }
        }
    }

    #[test]
    fn new_instance_stream_reuses_classes() {
        let c = StreamConfig { mode: StreamMode::NewInstance, ..cfg() };
        let (_, stream) = make_generator(&c).unwrap();
        let first: HashSet<_> = sample_task(&stream, 1).unwrap().0.class_ids().into_iter().collect();
        for t in 2..=10 {
            let ids: HashSet<_> = sample_task(&stream, t).unwrap().0.class_ids().into_iter().collect();
            assert_eq!(ids, first);
        }
        let (a, _) = sample_task(&stream, 1).unwrap();
        let (b, _) = sample_task(&stream, 2).unwrap();
        assert_ne!(a.examples, b.examples);
    }

    #[test]
    fn task_shapes_and_determinism() {
        let (_, stream) = make_generator(&cfg()).unwrap();
        let (train, test) = sample_task(&stream, 3).unwrap();
        assert_eq!(train.len(), 25);
        assert_eq!(test.len(), 250);
        train.validate().unwrap();
        test.validate().unwrap();
        assert_eq!(sample_task(&stream, 3).unwrap(), (train, test));
        assert!(matches!(sample_task(&stream, 0), Err(Error::TaskOutOfRange { .. })));
        assert!(matches!(sample_task(&stream, 11), Err(Error::TaskOutOfRange { .. })));
    }

    #[test]
    fn probes_are_fresh_and_seeded() {
        let (pool, stream) = make_generator(&cfg()).unwrap();
        let (nc, _) = sample_probe_task(ProbeSource::NovelQuery, &stream, &pool, 5, 5, 1).unwrap();
        assert!(nc.class_ids().iter().all(|id| !stream.class_ids().contains(id)));
        let (nc2, _) = sample_probe_task(ProbeSource::NovelQuery, &stream, &pool, 5, 5, 2).unwrap();
        assert_ne!(nc.examples, nc2.examples);

        let (bc, bc_test) = sample_probe_task(ProbeSource::BaseSupport, &stream, &pool, 5, 5, 1).unwrap();
        let support: HashSet<_> = pool.class_ids().into_iter().collect();
        assert!(bc.class_ids().iter().all(|id| support.contains(id)));
        bc.validate().unwrap();
        bc_test.validate().unwrap();

        assert!(matches!(
            sample_probe_task(ProbeSource::NovelQuery, &stream, &pool, 21, 5, 1),
            Err(Error::ClassSupplyExhausted { requested: 21, available: 20 })
        ));
    }

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_groups_by_class() {
        let f = write_csv("class_id,feat_0,feat_1\n3,0.5,1.0\n7,-1,2\n3,0.25,0\n");
        let (pool, table) = load_csv_dataset(f.path()).unwrap();
        assert_eq!(pool.input_dim, 2);
        assert_eq!(table.entries, vec![(3, 2), (7, 1)]);
        assert_eq!(pool.training_examples(99, 0).len(), 3);
    }

    #[test]
    fn csv_errors_name_lines() {
        let f = write_csv("class_id,feat_0,feat_1\n");
        let err = load_csv_dataset(f.path()).unwrap_err().to_string();
        assert!(err.contains("no data rows"), "{err}");

        let f = write_csv("class_id,feat_0,feat_1\n0,1,2\n1,3\n");
        match load_csv_dataset(f.path()) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }

        let f = write_csv("class_id,feat_0\n0,abc\n");
        match load_csv_dataset(f.path()) {
            Err(Error::Parse { line: 2, message, .. }) => assert!(message.contains("feat_0")),
            other => panic!("unexpected {other:?}"),
        }

        let f = write_csv("label,x\n0,1\n");
        assert!(matches!(load_csv_dataset(f.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn class_index_maps_in_order() {
        let mut idx = ClassIndex::new();
        assert_eq!(idx.register(&[9, 4, 9]), 2);
        assert_eq!(idx.register(&[4, 1]), 1);
        assert_eq!(idx.row_of(9).unwrap(), 0);
        assert_eq!(idx.row_of(1).unwrap(), 2);
        assert!(idx.row_of(5).is_err());
        let json = serde_json::to_string(&idx).unwrap();
        let back: ClassIndex = serde_json::from_str(&json).unwrap();
        assert_eq!(back.row_of(1).unwrap(), 2);
    }
}
