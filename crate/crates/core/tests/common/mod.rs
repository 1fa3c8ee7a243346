#![allow(dead_code)]

use tsc_core::nn::{Activation, NetworkSpec, WeightState};
use tsc_core::taskgen::{self, StreamConfig, StreamMode, SupportPool, TaskDataset, TaskStream};

pub fn stream_config(seed: u64, tasks: usize) -> StreamConfig {
    StreamConfig {
        tasks,
        ways: 3,
        shots: 4,
        test_shots: 10,
        input_dim: 6,
        support_classes: 12,
        probe_classes: 6,
        seed,
        ..StreamConfig::default()
    }
}

pub struct Fixture {
    pub pool: SupportPool,
    pub stream: TaskStream,
    pub tasks: Vec<(TaskDataset, TaskDataset)>,
    pub spec: NetworkSpec,
    pub weights: WeightState,
}

pub fn fixture(seed: u64, tasks: usize, mode: StreamMode) -> Fixture {
    let cfg = StreamConfig { mode, ..stream_config(seed, tasks) };
    let (pool, stream) = taskgen::make_generator(&cfg).unwrap();
    let tasks = (1..=tasks).map(|t| taskgen::sample_task(&stream, t).unwrap()).collect();
    let spec = NetworkSpec::mlp(cfg.input_dim, 2, 8, Activation::Relu, seed);
    let weights = WeightState::init(&spec).unwrap();
    Fixture { pool, stream, tasks, spec, weights }
}
