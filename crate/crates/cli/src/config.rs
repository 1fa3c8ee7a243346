//! Flat `key = value` run configuration with dotted section prefixes.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tsc_core::baselines::{Method, MethodConfig};
use tsc_core::consolidation::{ProbeFrom, TscConfig};
use tsc_core::evalkit::ProbeConfig;
use tsc_core::nn::{Activation, AdamConfig, NetworkSpec};
use tsc_core::taskgen::{StreamConfig, StreamMode};

use crate::error::{CliError, CliResult};

/// Environment variable consulted for `run.out` when no flag sets it.
pub const OUT_ENV: &str = "TSC_LAB_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSettings {
    pub depth: usize,
    pub width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSettings {
    pub epochs: usize,
    pub examples_per_class: usize,
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub ways: usize,
    pub shots: usize,
    pub epochs: usize,
    pub full_finetune: bool,
    pub nc: bool,
    pub bc: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfusionMode {
    None,
    Final,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub fisher: bool,
    pub confusion: ConfusionMode,
}

/// Inclusive seed list, written as `0-9` or `1,4,7`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedList(pub Vec<u64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub seeds: SeedList,
    pub out: PathBuf,
    pub checkpoints: bool,
    pub timing: bool,
    /// Stop after this many tasks (0 runs the whole stream).
    pub stop_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub network: NetworkSettings,
    pub stream: StreamConfig,
    pub tsc: TscConfig,
    pub method: MethodConfig,
    pub adam: AdamConfig,
    pub pretrain: PretrainSettings,
    pub probe: ProbeSettings,
    pub eval: EvalSettings,
    pub run: RunSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            network: NetworkSettings { depth: 2, width: 64, activation: Activation::Relu },
            stream: StreamConfig::default(),
            tsc: TscConfig::default(),
            method: MethodConfig { method: Method::Tsc, ..MethodConfig::default() },
            adam: AdamConfig::default(),
            pretrain: PretrainSettings { epochs: 20, examples_per_class: 20, batch_size: 50, lr: 0.001 },
            probe: ProbeSettings { ways: 5, shots: 5, epochs: 200, full_finetune: false, nc: true, bc: true },
            eval: EvalSettings { fisher: true, confusion: ConfusionMode::Final },
            run: RunSettings {
                seeds: SeedList((0..10).collect()),
                out: PathBuf::from("tsc-lab-out"),
                checkpoints: true,
                timing: false,
                stop_after: 0,
            },
        }
    }
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! via_fromstr {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

via_fromstr!(f64, usize, u64, bool);

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

fn named<T: Copy>(s: &str, options: &[(&str, T)]) -> Result<T, String> {
    options
        .iter()
        .find(|(name, _)| *name == s)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            format!("expected one of {}", names.join(", "))
        })
}

impl ConfigValue for Activation {
    fn parse_value(s: &str) -> Result<Self, String> {
        Activation::from_str(s).map_err(|e| e.to_string())
    }
    fn render(&self) -> String {
        match self {
            Activation::Relu => "relu".into(),
            Activation::Tanh => "tanh".into(),
        }
    }
}

impl ConfigValue for StreamMode {
    fn parse_value(s: &str) -> Result<Self, String> {
        StreamMode::from_str(s).map_err(|e| e.to_string())
    }
    fn render(&self) -> String {
        self.name().into()
    }
}

impl ConfigValue for Method {
    fn parse_value(s: &str) -> Result<Self, String> {
        Method::from_str(s).map_err(|e| e.to_string())
    }
    fn render(&self) -> String {
        self.name().into()
    }
}

impl ConfigValue for ProbeFrom {
    fn parse_value(s: &str) -> Result<Self, String> {
        named(s, &[("slow", ProbeFrom::Slow), ("fast", ProbeFrom::Fast)])
    }
    fn render(&self) -> String {
        match self {
            ProbeFrom::Slow => "slow".into(),
            ProbeFrom::Fast => "fast".into(),
        }
    }
}

impl ConfigValue for ConfusionMode {
    fn parse_value(s: &str) -> Result<Self, String> {
        named(s, &[("none", ConfusionMode::None), ("final", ConfusionMode::Final), ("all", ConfusionMode::All)])
    }
    fn render(&self) -> String {
        match self {
            ConfusionMode::None => "none".into(),
            ConfusionMode::Final => "final".into(),
            ConfusionMode::All => "all".into(),
        }
    }
}

impl ConfigValue for SeedList {
    fn parse_value(s: &str) -> Result<Self, String> {
        let mut seeds = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('-') {
                Some((a, b)) => {
                    let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
                    let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
                    if b < a {
                        return Err(format!("empty seed range {part}"));
                    }
                    seeds.extend(a..=b);
                }
                None => seeds.push(part.parse().map_err(|e| format!("{e}"))?),
            }
        }
        if seeds.is_empty() {
            return Err("no seeds given".into());
        }
        Ok(SeedList(seeds))
    }
    fn render(&self) -> String {
        let s = &self.0;
        let contiguous = s.windows(2).all(|w| w[1] == w[0] + 1);
        if s.len() > 2 && contiguous {
            format!("{}-{}", s[0], s[s.len() - 1])
        } else {
            s.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
        }
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        /// Every configuration key, in echo order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            /// Sets one dotted key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
                let value = value.trim();
                match key {
                    $($key => {
                        self.$($field).+ = ConfigValue::parse_value(value)
                            .map_err(|reason| CliError::Config(format!("{key} = {value}: {reason}")))?;
                    })*
                    _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$($field).+.render()),)*
                    _ => None,
                }
            }
        }
    };
}

config_keys! {
    "network.depth" => network.depth,
    "network.width" => network.width,
    "network.activation" => network.activation,
    "stream.tasks" => stream.tasks,
    "stream.ways" => stream.ways,
    "stream.shots" => stream.shots,
    "stream.test_shots" => stream.test_shots,
    "stream.mode" => stream.mode,
    "stream.input_dim" => stream.input_dim,
    "stream.shift" => stream.shift,
    "stream.class_spread" => stream.class_spread,
    "stream.within_class_noise" => stream.within_class_noise,
    "stream.support_classes" => stream.support_classes,
    "stream.probe_classes" => stream.probe_classes,
    "method" => method.method,
    "method.reg_strength" => method.reg_strength,
    "method.epochs" => method.epochs,
    "method.batch_size" => method.batch_size,
    "method.si_damping" => method.si_damping,
    "method.penalize_head" => method.penalize_head,
    "tsc.beta" => tsc.beta,
    "tsc.k" => tsc.k,
    "tsc.lambda" => tsc.lambda,
    "tsc.m" => tsc.gate_scale,
    "tsc.joint_step2" => tsc.joint_step2,
    "tsc.head_max_epochs" => tsc.head_max_epochs,
    "tsc.plateau_tol" => tsc.plateau.tol,
    "tsc.plateau_patience" => tsc.plateau.patience,
    "tsc.batch_size" => tsc.batch_size,
    "tsc.probe_from" => tsc.probe_from,
    "adam.lr" => adam.lr,
    "adam.beta1" => adam.beta1,
    "adam.beta2" => adam.beta2,
    "adam.epsilon" => adam.epsilon,
    "pretrain.epochs" => pretrain.epochs,
    "pretrain.examples_per_class" => pretrain.examples_per_class,
    "pretrain.batch_size" => pretrain.batch_size,
    "pretrain.lr" => pretrain.lr,
    "probe.ways" => probe.ways,
    "probe.shots" => probe.shots,
    "probe.epochs" => probe.epochs,
    "probe.full_finetune" => probe.full_finetune,
    "probe.nc" => probe.nc,
    "probe.bc" => probe.bc,
    "eval.fisher" => eval.fisher,
    "eval.confusion" => eval.confusion,
    "run.seeds" => run.seeds,
    "run.out" => run.out,
    "run.checkpoints" => run.checkpoints,
    "run.timing" => run.timing,
    "run.stop_after" => run.stop_after,
}

impl RunConfig {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| CliError::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `key=value` assignments.
    pub fn apply_assignments<S: AsRef<str>>(&mut self, assignments: &[S]) -> CliResult<()> {
        for a in assignments {
            let a = a.as_ref();
            let (key, value) = a
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("expected key=value, got `{a}`")))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// The resolved configuration as `key = value` lines.
    pub fn echo(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("every key renders")))
            .collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        self.stream.validate()?;
        self.tsc_config().validate()?;
        if self.method.method != Method::Tsc {
            self.method_config().validate()?;
        }
        self.network_spec(0).validate()?;
        if self.probe.ways == 0 || self.probe.shots == 0 {
            return Err(CliError::Config("probe.ways and probe.shots must be positive".into()));
        }
        if self.pretrain.batch_size == 0 {
            return Err(CliError::Config("pretrain.batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn network_spec(&self, init_seed: u64) -> NetworkSpec {
        NetworkSpec::mlp(
            self.stream.input_dim,
            self.network.depth,
            self.network.width,
            self.network.activation,
            init_seed,
        )
    }

    pub fn stream_config(&self, seed: u64) -> StreamConfig {
        StreamConfig { seed, ..self.stream.clone() }
    }

    pub fn tsc_config(&self) -> TscConfig {
        TscConfig { adam: self.adam, ..self.tsc.clone() }
    }

    pub fn method_config(&self) -> MethodConfig {
        MethodConfig { adam: self.adam, ..self.method.clone() }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            epochs: self.probe.epochs,
            batch_size: self.tsc.batch_size,
            adam: self.adam,
            full_finetune: self.probe.full_finetune,
        }
    }

    /// Short label naming the method, e.g. `tsc` or `ewc_m`.
    pub fn method_label(&self) -> String {
        self.method.method.name().to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("tsc.beta", "0.1").unwrap();
        cfg.set("run.seeds", "3,5").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.echo(), "echo").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(KEYS.len(), cfg.echo().lines().count());
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("tsc.gamma", "1").is_err());
        assert!(cfg.set("tsc.k", "many").is_err());
        let err = cfg.apply_text("tsc.k = 5\nnonsense\n", "f.cfg").unwrap_err();
        assert!(err.to_string().contains("f.cfg:2"));
    }

    #[test]
    fn seed_lists() {
        assert_eq!(SeedList::parse_value("0-3").unwrap().0, vec![0, 1, 2, 3]);
        assert_eq!(SeedList::parse_value("7, 2,4-5").unwrap().0, vec![7, 2, 4, 5]);
        assert!(SeedList::parse_value("5-1").is_err());
        assert_eq!(SeedList(vec![0, 1, 2]).render(), "0-2");
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        let mut cfg = RunConfig::default();
        cfg.set("tsc.beta", "2").unwrap();
        assert!(cfg.validate().is_err());
    }
}
