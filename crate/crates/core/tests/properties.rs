mod common;

use proptest::prelude::*;
use tsc_core::baselines::{estimate_fisher, estimate_mas};
use tsc_core::consolidation::{
    compute_activity, compute_gate, consolidate_slow, train_embedding_step, update_cumulative, ActivityState,
    TscConfig,
};
use tsc_core::evalkit::evaluate_single_head;
use tsc_core::nn::{self, Activation, LabeledBatch, Matrix, NetworkCheckpoint, NetworkSpec, WeightState};
use tsc_core::taskgen::{ClassIndex, StreamMode, TaskDataset};

fn net(classes: usize, seed: u64) -> (NetworkSpec, WeightState) {
    let spec = NetworkSpec::mlp(3, 2, 4, Activation::Tanh, seed).with_output_classes(classes);
    let w = WeightState::init(&spec).unwrap();
    (spec, w)
}

fn weights_with(values: &[f64], seed: u64) -> WeightState {
    let (_, mut w) = net(2, seed);
    for (v, x) in w.values.iter_mut().zip(values.iter().cycle()) {
        *v = *x;
    }
    w
}

fn batch_from(rows: &[Vec<f64>], classes: usize) -> LabeledBatch {
    let labels = (0..rows.len()).map(|i| i % classes).collect();
    LabeledBatch::new(Matrix::from_rows(rows).unwrap(), labels).unwrap()
}

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 3), 2..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gate_in_open_unit_interval_and_monotone(
        layer in prop::collection::vec(0.0..50.0f64, 1..12),
        t in 1usize..6,
        m in 0.01..100.0f64,
    ) {
        let mut state = ActivityState::new(vec![layer.len()], m, 1e-10);
        state.cumulative = layer.clone();
        state.tasks_seen = t;
        state.per_layer_mean = vec![layer.iter().sum::<f64>() / layer.len() as f64 / t as f64];
        let gate = compute_gate(&state).unwrap();
        let threshold = state.per_layer_mean[0];
        for (i, &d) in gate.iter().enumerate() {
            prop_assert!(d > 0.0 && d < 1.0, "gate {d}");
            for (j, &e) in gate.iter().enumerate() {
                if layer[i] < layer[j] {
                    prop_assert!(d <= e);
                }
            }
            if layer[i] == threshold {
                prop_assert_eq!(d, 0.5);
            }
        }
    }

    #[test]
    fn cumulative_activity_is_monotone(steps in prop::collection::vec(prop::collection::vec(0.0..3.0f64, 5), 1..6)) {
        let mut state = ActivityState::new(vec![2, 3], 1.0, 1e-10);
        for (t, a) in steps.iter().enumerate() {
            let before = state.cumulative.clone();
            update_cumulative(&mut state, a).unwrap();
            prop_assert_eq!(state.tasks_seen, t + 1);
            for (b, c) in before.iter().zip(&state.cumulative) {
                prop_assert!(c >= b);
            }
        }
    }

    #[test]
    fn consolidation_is_the_affine_interpolation(
        slow in prop::collection::vec(-5.0..5.0f64, 1..50),
        fast in prop::collection::vec(-5.0..5.0f64, 1..50),
        beta in 0.0..=1.0f64,
    ) {
        let s = weights_with(&slow, 1);
        let f = weights_with(&fast, 1);
        let c = consolidate_slow(&s, &f, beta).unwrap();
        for ((&cv, &sv), &fv) in c.values.iter().zip(&s.values).zip(&f.values) {
            let expected = (1.0 - beta) * sv + beta * fv;
            prop_assert!((cv - expected).abs() <= 1e-15 * expected.abs().max(1.0));
            prop_assert!(cv >= sv.min(fv) - 1e-15 && cv <= sv.max(fv) + 1e-15);
        }
        let frozen = consolidate_slow(&s, &f, 0.0).unwrap();
        let copied = consolidate_slow(&s, &f, 1.0).unwrap();
        prop_assert!(frozen.values.iter().zip(&s.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert!(copied.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn zero_iterations_freeze_the_embedding(rows in rows_strategy(), seed in 0u64..1000) {
        let (spec, slow) = net(2, seed);
        let mut fast = slow.clone();
        fast.output_mut().iter_mut().for_each(|v| *v += 0.5);
        let gate = vec![0.5; slow.layout.embedding_len()];
        let cfg = TscConfig { k: 0, ..TscConfig::default() };
        let before = fast.clone();
        let n = train_embedding_step(&mut fast, &slow, &spec, &gate, &batch_from(&rows, 2), &cfg, seed).unwrap();
        prop_assert_eq!(n, 0);
        prop_assert_eq!(fast, before);
    }

    #[test]
    fn activity_invariant_under_duplication(rows in rows_strategy(), seed in 0u64..1000) {
        let (spec, w) = net(2, seed);
        let once = batch_from(&rows, 2);
        let idx: Vec<usize> = (0..once.len()).chain(0..once.len()).collect();
        let twice = once.gather(&idx);
        let a = compute_activity(&w, &spec, &once).unwrap();
        let b = compute_activity(&w, &spec, &twice).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-12), "{x} vs {y}");
        }
    }

    #[test]
    fn network_checkpoint_round_trips(values in prop::collection::vec(-1e6..1e6f64, 1..40), seed in 0u64..1000) {
        let (spec, _) = net(2, seed);
        let w = weights_with(&values, seed);
        let text = NetworkCheckpoint::new(&spec, &w, None).unwrap().to_json().unwrap();
        let back = NetworkCheckpoint::from_json(&text).unwrap().weights().unwrap();
        prop_assert!(back.values.iter().zip(&w.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn importance_is_non_negative(rows in rows_strategy(), seed in 0u64..1000) {
        let (spec, w) = net(3, seed);
        let batch = batch_from(&rows, 3);
        prop_assert!(estimate_fisher(&w, &spec, &batch).unwrap().values.iter().all(|v| *v >= 0.0));
        prop_assert!(estimate_mas(&w, &spec, &batch).unwrap().values.iter().all(|v| *v >= 0.0));
    }
}

fn shuffled(task: &TaskDataset, seed: u64) -> TaskDataset {
    use rand::seq::SliceRandom;
    let mut out = task.clone();
    out.examples.shuffle(&mut tsc_core::seed::rng(seed));
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn accuracy_ignores_test_order_and_top5_dominates(seed in 0u64..500, perm in 0u64..500) {
        let fx = common::fixture(seed, 3, StreamMode::NewClass);
        let tests: Vec<TaskDataset> = fx.tasks.iter().map(|(_, test)| test.clone()).collect();
        let mut classes = ClassIndex::new();
        for (train, _) in &fx.tasks {
            classes.register(&train.class_ids());
        }
        let (w, spec) = nn::grow_output(&fx.weights, &fx.spec, classes.len(), 0.3, seed).unwrap();
        let a = evaluate_single_head(&w, &spec, &classes, &tests).unwrap();
        let permuted: Vec<TaskDataset> = tests.iter().map(|t| shuffled(t, perm)).collect();
        let b = evaluate_single_head(&w, &spec, &classes, &permuted).unwrap();
        prop_assert_eq!(a.a_top1, b.a_top1);
        prop_assert_eq!(a.a_top5, b.a_top5);
        prop_assert_eq!(&a.per_task, &b.per_task);
        prop_assert!(a.a_top5 >= a.a_top1);
        prop_assert!(!a.top5_flagged);
    }
}
