//! Central finite-difference checks of every analytic gradient.

use rand::Rng;
use rand_distr::StandardNormal;
use tsc_core::consolidation::{compute_activity, stc_penalty};
use tsc_core::nn::{self, Activation, LabeledBatch, Matrix, NetworkSpec, Scope, WeightState};
use tsc_core::seed;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn normal(rng: &mut seed::Rng, scale: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    scale * z
}

struct Instance {
    spec: NetworkSpec,
    weights: WeightState,
    batch: LabeledBatch,
}

fn instance(i: u64) -> Instance {
    let mut rng = seed::rng(seed::derive_indexed(7, "grad-instance", i));
    let act = if i % 2 == 0 { Activation::Tanh } else { Activation::Relu };
    let input_dim = rng.random_range(2..5);
    let depth = rng.random_range(1..3);
    let width = rng.random_range(2..6);
    let classes = rng.random_range(2..5);
    let spec = NetworkSpec::mlp(input_dim, depth, width, act, i).with_output_classes(classes);
    let mut weights = WeightState::init(&spec).unwrap();
    assert!(weights.len() <= 200);
    weights.values.iter_mut().for_each(|v| *v = normal(&mut rng, 0.7));
    let rows = rng.random_range(3..7);
    let inputs: Vec<Vec<f64>> = (0..rows).map(|_| (0..input_dim).map(|_| normal(&mut rng, 1.0)).collect()).collect();
    let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    let batch = LabeledBatch::new(Matrix::from_rows(&inputs).unwrap(), labels).unwrap();
    Instance { spec, weights, batch }
}

fn numeric_grad(values: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = values.to_vec();
    (0..values.len())
        .map(|j| {
            let orig = x[j];
            x[j] = orig + STEP;
            let up = f(&x);
            x[j] = orig - STEP;
            let down = f(&x);
            x[j] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn loss_at(inst: &Instance, values: &[f64]) -> f64 {
    let w = WeightState { values: values.to_vec(), layout: inst.weights.layout.clone() };
    nn::loss_and_grad(&w, &inst.spec, &inst.batch, Scope::OutputOnly).unwrap().0
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    for i in 0..24 {
        let inst = instance(i);
        let (_, grad) = nn::loss_and_grad(&inst.weights, &inst.spec, &inst.batch, Scope::All).unwrap();
        let numeric = numeric_grad(&inst.weights.values, |v| loss_at(&inst, v));
        for (j, (a, n)) in grad.values.iter().zip(&numeric).enumerate() {
            assert!(rel_err(*a, *n) < REL_TOL, "instance {i} param {j}: analytic {a} numeric {n}");
        }
    }
}

#[test]
fn stc_penalty_gradient_matches_finite_differences() {
    for i in 0..24 {
        let mut rng = seed::rng(seed::derive_indexed(7, "stc-instance", i));
        let n = rng.random_range(1..40);
        let fast: Vec<f64> = (0..n).map(|_| normal(&mut rng, 1.0)).collect();
        let slow: Vec<f64> = (0..n).map(|_| normal(&mut rng, 1.0)).collect();
        let gate: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let lambda = rng.random_range(0.01..2.0);
        let (_, grad) = stc_penalty(&fast, &slow, &gate, lambda).unwrap();
        let numeric = numeric_grad(&fast, |f| stc_penalty(f, &slow, &gate, lambda).unwrap().0);
        for (a, n) in grad.iter().zip(&numeric) {
            assert!(rel_err(*a, *n) < REL_TOL, "instance {i}: analytic {a} numeric {n}");
        }
    }
}

fn squared_logit_norm(inst: &Instance, values: &[f64], row: usize) -> f64 {
    let w = WeightState { values: values.to_vec(), layout: inst.weights.layout.clone() };
    let x = inst.batch.inputs.gather(&[row]);
    nn::forward(&w, &inst.spec, &x).unwrap().row(0).iter().map(|f| f * f).sum()
}

#[test]
fn mas_objective_gradient_matches_finite_differences() {
    for i in 0..24 {
        let inst = instance(i);
        let logits = nn::forward(&inst.weights, &inst.spec, &inst.batch.inputs).unwrap();
        let cotangent: Vec<f64> = logits.row(0).iter().map(|f| 2.0 * f).collect();
        let grad = nn::logits_vjp(&inst.weights, &inst.spec, inst.batch.inputs.row(0), &cotangent).unwrap();
        let numeric = numeric_grad(&inst.weights.values, |v| squared_logit_norm(&inst, v, 0));
        for (j, (a, n)) in grad.values.iter().zip(&numeric).enumerate() {
            assert!(rel_err(*a, *n) < REL_TOL, "instance {i} param {j}: analytic {a} numeric {n}");
        }
    }
}

#[test]
fn activity_is_abs_mean_of_per_example_gradients() {
    for i in 0..6 {
        let mut inst = instance(i);
        let rows: Vec<usize> = (0..4).map(|r| r % inst.batch.len()).collect();
        inst.batch = inst.batch.gather(&rows);
        let activity = compute_activity(&inst.weights, &inst.spec, &inst.batch).unwrap();
        let e = inst.weights.layout.embedding_len();
        assert_eq!(activity.len(), e);
        let mut mean = vec![0.0; e];
        for r in 0..4 {
            let one = Instance {
                spec: inst.spec.clone(),
                weights: inst.weights.clone(),
                batch: inst.batch.gather(&[r]),
            };
            let g = numeric_grad(&inst.weights.values, |v| loss_at(&one, v));
            mean.iter_mut().zip(&g).for_each(|(m, g)| *m += g / 4.0);
        }
        for (a, m) in activity.iter().zip(&mean) {
            assert!(rel_err(*a, m.abs()) < REL_TOL, "instance {i}: activity {a} numeric {m}");
        }
    }
}
