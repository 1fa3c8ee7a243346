mod common;

use tsc_core::baselines::{
    estimate_fisher, estimate_mas, run_sequential, train_baseline_task, BaselineState, Method, MethodConfig,
    ReplayBuffer,
};
use tsc_core::nn::{self, Activation, LabeledBatch, Matrix, NetworkSpec, WeightState};
use tsc_core::taskgen::StreamMode;

fn cfg(method: Method) -> MethodConfig {
    MethodConfig { method, epochs: 10, ..MethodConfig::default() }
}

fn run(fx: &common::Fixture, c: &MethodConfig, tasks: usize) -> (BaselineState, ReplayBuffer, Vec<usize>) {
    let mut state = BaselineState::new(&fx.spec, &fx.weights).unwrap();
    let mut replay = ReplayBuffer::new();
    let used = (0..tasks)
        .map(|t| train_baseline_task(&mut state, c, &fx.tasks[t].0, &mut replay, 21).unwrap().examples_used)
        .collect();
    (state, replay, used)
}

fn bits(w: &WeightState) -> Vec<u64> {
    w.values.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn joint_replay_and_sequential_coincide_on_the_first_task() {
    let fx = common::fixture(1, 1, StreamMode::NewClass);
    let (mr, _, _) = run(&fx, &cfg(Method::Mr), 1);
    let (jt, _, _) = run(&fx, &cfg(Method::Jt), 1);
    let (st, _, _) = run(&fx, &cfg(Method::St), 1);
    assert_eq!(bits(&mr.weights), bits(&jt.weights));
    assert_eq!(bits(&mr.weights), bits(&st.weights));
}

#[test]
fn replay_bookkeeping() {
    let fx = common::fixture(2, 3, StreamMode::NewClass);
    let nk = fx.tasks[0].0.len();
    let (_, replay, used) = run(&fx, &cfg(Method::Mr), 3);
    assert_eq!(replay.len(), 3 * nk);
    assert_eq!(used, vec![nk, 2 * nk, 3 * nk]);
    let order: Vec<usize> = replay.entries().iter().map(|e| e.task_index).collect();
    assert!(order.windows(2).all(|w| w[0] <= w[1]));

    let (_, _, jt_used) = run(&fx, &cfg(Method::Jt), 3);
    assert_eq!(jt_used, vec![nk, 2 * nk, 3 * nk]);

    let (_, replay, st_used) = run(&fx, &cfg(Method::St), 3);
    assert_eq!(replay.len(), 0);
    assert_eq!(replay.reads(), 0);
    assert_eq!(st_used, vec![nk; 3]);
}

#[test]
fn sequential_equals_replay_for_a_single_task() {
    let fx = common::fixture(9, 1, StreamMode::NewClass);
    let (st, _, _) = run(&fx, &cfg(Method::St), 1);
    let (mr, _, _) = run(&fx, &cfg(Method::Mr), 1);
    assert_eq!(bits(&st.weights), bits(&mr.weights));
}

#[test]
fn zero_strength_regularisers_reduce_to_replay() {
    let fx = common::fixture(3, 3, StreamMode::NewClass);
    let (mr, _, _) = run(&fx, &cfg(Method::Mr), 3);
    for method in [Method::Cp, Method::EwcM, Method::MasM, Method::SiM] {
        let c = MethodConfig { reg_strength: 0.0, ..cfg(method) };
        let (reg, _, _) = run(&fx, &c, 3);
        assert_eq!(reg.weights.values, mr.weights.values, "{}", method.name());
    }
}

#[test]
fn huge_constant_penalty_pins_the_embedding() {
    let fx = common::fixture(4, 2, StreamMode::NewClass);
    let c = MethodConfig { reg_strength: 1e9, ..cfg(Method::Cp) };
    let mut state = BaselineState::new(&fx.spec, &fx.weights).unwrap();
    let mut replay = ReplayBuffer::new();
    let mut free = state.clone();
    let mut free_replay = ReplayBuffer::new();
    for t in 0..2 {
        let anchor = state.weights.embedding().to_vec();
        train_baseline_task(&mut state, &c, &fx.tasks[t].0, &mut replay, 5).unwrap();
        let worst = state.weights.embedding().iter().zip(&anchor).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-3, "task {}: max displacement {worst}", t + 1);

        let free_anchor = free.weights.embedding().to_vec();
        train_baseline_task(&mut free, &cfg(Method::Mr), &fx.tasks[t].0, &mut free_replay, 5).unwrap();
        let moved = free.weights.embedding().iter().zip(&free_anchor).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(moved > worst);
    }
}

#[test]
fn sequential_training_forgets_the_first_task() {
    let mut drop = 0.0;
    for seed in 0..10 {
        let fx = common::fixture(seed, 5, StreamMode::NewClass);
        let mut state = BaselineState::new(&fx.spec, &fx.weights).unwrap();
        let records = run_sequential(&mut state, &cfg(Method::St), &fx.tasks, seed).unwrap();
        drop += records[0].per_task_accuracy[0] - records[4].per_task_accuracy[0];
    }
    assert!(drop / 10.0 > 0.0, "mean drop {}", drop / 10.0);
}

/// One relu unit with weight 1 and bias 0 passes positive inputs through,
/// so the head is plain softmax regression on `x`.
fn identity_trunk(classes: usize, head: &[f64]) -> (NetworkSpec, WeightState) {
    let spec = NetworkSpec::mlp(1, 1, 1, Activation::Relu, 0).with_output_classes(classes);
    let mut w = WeightState::zeros(&spec).unwrap();
    w.values[0] = 1.0;
    w.values[2..].copy_from_slice(head);
    (spec, w)
}

#[test]
fn fisher_matches_hand_computed_logistic_regression() {
    let head = [0.7, -0.4, 0.1, 0.3];
    let (spec, w) = identity_trunk(2, &head);
    let xs = [0.5, 1.0, 1.5, 2.0];
    let ys = [0usize, 1, 0, 1];
    let batch = LabeledBatch::new(Matrix::from_rows(&xs.map(|x| [x])).unwrap(), ys.to_vec()).unwrap();
    let fisher = estimate_fisher(&w, &spec, &batch).unwrap();

    let mut oracle = [0.0; 6];
    for (&x, &y) in xs.iter().zip(&ys) {
        let z = [head[0] * x + head[2], head[1] * x + head[3]];
        let norm = z[0].exp() + z[1].exp();
        let r: Vec<f64> = (0..2).map(|c| z[c].exp() / norm - if c == y { 1.0 } else { 0.0 }).collect();
        let dh = r[0] * head[0] + r[1] * head[1];
        let g = [dh * x, dh, r[0] * x, r[1] * x, r[0], r[1]];
        for (o, gi) in oracle.iter_mut().zip(g) {
            *o += gi * gi / 4.0;
        }
    }
    for (i, (f, o)) in fisher.values.iter().zip(&oracle).enumerate() {
        assert!((f - o).abs() < 1e-10, "param {i}: {f} vs {o}");
    }
}

#[test]
fn mas_matches_finite_differences_of_squared_output() {
    let head = [0.8, -0.3];
    let (spec, w) = identity_trunk(1, &head);
    let xs = [0.6, 1.7];
    let batch = LabeledBatch::new(Matrix::from_rows(&xs.map(|x| [x])).unwrap(), vec![0, 0]).unwrap();
    let mas = estimate_mas(&w, &spec, &batch).unwrap();
    let h = 1e-6;
    for p in 0..w.len() {
        let mut oracle = 0.0;
        for &x in &xs {
            let f = |v: f64| {
                let mut ww = w.clone();
                ww.values[p] = v;
                let out = nn::forward(&ww, &spec, &Matrix::from_rows(&[[x]]).unwrap()).unwrap();
                out.row(0)[0].powi(2)
            };
            let v = w.values[p];
            oracle += ((f(v + h) - f(v - h)) / (2.0 * h)).abs() / xs.len() as f64;
        }
        assert!((mas.values[p] - oracle).abs() < 1e-6, "param {p}: {} vs {oracle}", mas.values[p]);
    }
}
