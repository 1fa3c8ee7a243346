//! Forward pass, cross-entropy loss, and exact reverse-mode gradients.
//!
//! Every row of a batch is evaluated by the same per-row kernels, so an
//! example's activations never depend on which other rows share its batch.
//! The head-only training path relies on this to reuse cached features
//! while staying bit-identical to [`loss_and_grad`].

use serde::{Deserialize, Serialize};

use super::layout::{uniform_fill, LayerLayout, NetworkSpec, WeightState};
use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "matrix row",
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// New matrix made of the given rows, in order.
    pub fn gather(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledBatch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "labels",
                expected: inputs.rows,
                actual: labels.len(),
            });
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn gather(&self, indices: &[usize]) -> LabeledBatch {
        LabeledBatch {
            inputs: self.inputs.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Which parameters receive gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    All,
    EmbeddingOnly,
    OutputOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    pub values: Vec<f64>,
}

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn check_aligned(&self, weights: &WeightState) -> Result<()> {
        if self.values.len() != weights.len() {
            return Err(Error::LayoutMismatch(format!(
                "gradient has {} entries, weights have {}",
                self.values.len(),
                weights.len()
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x + b` for one row.
#[inline]
fn dense_row(params: &[f64], layer: &LayerLayout, x: &[f64], out: &mut [f64]) {
    let n = layer.inputs;
    let w = &params[layer.weight_range()];
    let b = &params[layer.bias_range()];
    for (o, slot) in out.iter_mut().enumerate() {
        *slot = b[o] + dot(&w[o * n..(o + 1) * n], x);
    }
}

fn check_inputs(spec: &NetworkSpec, inputs: &Matrix) -> Result<()> {
    if inputs.cols != spec.input_dim {
        return Err(Error::DimensionMismatch {
            context: "input features",
            expected: spec.input_dim,
            actual: inputs.cols,
        });
    }
    Ok(())
}

/// Per-layer pre-activations and activations of the embedding, one matrix
/// per hidden layer.
struct EmbeddingTrace {
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

fn embed_traced(weights: &WeightState, spec: &NetworkSpec, inputs: &Matrix) -> EmbeddingTrace {
    let layers = weights.layout.embedding_layers();
    let mut pre = Vec::with_capacity(layers.len());
    let mut post: Vec<Matrix> = Vec::with_capacity(layers.len());
    for (li, (layer, hidden)) in layers.iter().zip(&spec.hidden_layers).enumerate() {
        let mut z = Matrix::zeros(inputs.rows, layer.outputs);
        let mut a = Matrix::zeros(inputs.rows, layer.outputs);
        for r in 0..inputs.rows {
            let x = if li == 0 { inputs.row(r) } else { post[li - 1].row(r) };
            dense_row(&weights.values, layer, x, z.row_mut(r));
        }
        for (av, &zv) in a.data.iter_mut().zip(&z.data) {
            *av = hidden.activation.apply(zv);
        }
        pre.push(z);
        post.push(a);
    }
    EmbeddingTrace { pre, post }
}

/// Output of the last hidden layer, one row per input row.
pub fn embed(weights: &WeightState, spec: &NetworkSpec, inputs: &Matrix) -> Result<Matrix> {
    weights.check_spec(spec)?;
    check_inputs(spec, inputs)?;
    let trace = embed_traced(weights, spec, inputs);
    Ok(trace.post.into_iter().last().expect("non-empty embedding"))
}

/// Head logits for precomputed embedding features.
pub fn head_logits(weights: &WeightState, features: &Matrix) -> Matrix {
    let head = weights.layout.output_layer();
    let mut logits = Matrix::zeros(features.rows, head.outputs);
    for r in 0..features.rows {
        dense_row(&weights.values, head, features.row(r), logits.row_mut(r));
    }
    logits
}

pub fn forward(weights: &WeightState, spec: &NetworkSpec, inputs: &Matrix) -> Result<Matrix> {
    if spec.output_classes == 0 {
        return Err(Error::InvalidArgument("network has no output classes".into()));
    }
    let features = embed(weights, spec, inputs)?;
    Ok(head_logits(weights, &features))
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Mean cross-entropy of the head over cached features.
///
/// Accumulates the head gradient (scaled to the batch mean) into
/// `head_grad`, which is aligned with the output layer's parameter slice.
/// When `feature_grad` is given it receives d(loss)/d(features).
pub(crate) fn head_backward(
    weights: &WeightState,
    features: &Matrix,
    labels: &[usize],
    head_grad: &mut [f64],
    mut feature_grad: Option<&mut Matrix>,
) -> f64 {
    let head = *weights.layout.output_layer();
    let params = &weights.values[head.range()];
    let (n_in, classes) = (head.inputs, head.outputs);
    let w = &params[..n_in * classes];
    let (gw, gb) = head_grad.split_at_mut(n_in * classes);
    let inv_n = 1.0 / labels.len() as f64;
    let mut logits = vec![0.0; classes];
    let local = LayerLayout { offset: 0, ..head };
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let h = features.row(r);
        dense_row(params, &local, h, &mut logits);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let target_shifted = logits[y] - max;
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        loss += sum.ln() - target_shifted;
        // logits now hold unnormalised probabilities; turn them into dL/dz.
        let inv_sum = 1.0 / sum;
        for (c, l) in logits.iter_mut().enumerate() {
            let p = *l * inv_sum;
            *l = (p - if c == y { 1.0 } else { 0.0 }) * inv_n;
        }
        for (c, &d) in logits.iter().enumerate() {
            axpy(d, h, &mut gw[c * n_in..(c + 1) * n_in]);
            gb[c] += d;
        }
        if let Some(fg) = feature_grad.as_deref_mut() {
            let row = fg.row_mut(r);
            for (c, &d) in logits.iter().enumerate() {
                axpy(d, &w[c * n_in..(c + 1) * n_in], row);
            }
        }
    }
    loss * inv_n
}

/// Mean cross-entropy and its gradient restricted to `scope`.
pub fn loss_and_grad(
    weights: &WeightState,
    spec: &NetworkSpec,
    batch: &LabeledBatch,
    scope: Scope,
) -> Result<(f64, GradientVector)> {
    weights.check_spec(spec)?;
    check_inputs(spec, &batch.inputs)?;
    check_labels(&batch.labels, spec.output_classes)?;
    let layout = &weights.layout;
    let trace = embed_traced(weights, spec, &batch.inputs);
    let features = trace.post.last().expect("non-empty embedding");

    let mut grad = GradientVector::zeros(weights.len());
    let head_range = layout.output_range();
    let mut feature_grad = match scope {
        Scope::OutputOnly => None,
        _ => Some(Matrix::zeros(features.rows, features.cols)),
    };
    let loss = head_backward(
        weights,
        features,
        &batch.labels,
        &mut grad.values[head_range.clone()],
        feature_grad.as_mut(),
    );
    if scope == Scope::EmbeddingOnly {
        grad.values[head_range].iter_mut().for_each(|g| *g = 0.0);
    }

    if let Some(upstream) = feature_grad {
        backprop_embedding(weights, spec, &batch.inputs, &trace, upstream, &mut grad.values);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss_and_grad"));
    }
    Ok((loss, grad))
}

/// Accumulates embedding-parameter gradients given dL/d(features).
fn backprop_embedding(
    weights: &WeightState,
    spec: &NetworkSpec,
    inputs: &Matrix,
    trace: &EmbeddingTrace,
    mut upstream: Matrix,
    grad: &mut [f64],
) {
    let layers = weights.layout.embedding_layers();
    for li in (0..layers.len()).rev() {
        let layer = layers[li];
        let act = spec.hidden_layers[li].activation;
        // upstream holds dL/da for this layer; convert to dL/dz in place.
        for ((g, &z), &a) in upstream
            .data
            .iter_mut()
            .zip(&trace.pre[li].data)
            .zip(&trace.post[li].data)
        {
            *g *= act.derivative(z, a);
        }
        let n_in = layer.inputs;
        let mut next = (li > 0).then(|| Matrix::zeros(inputs.rows, n_in));
        let (gw, gb) = grad[layer.range()].split_at_mut(n_in * layer.outputs);
        let w = &weights.values[layer.weight_range()];
        for r in 0..inputs.rows {
            let x = if li == 0 { inputs.row(r) } else { trace.post[li - 1].row(r) };
            let dz = upstream.row(r);
            for (o, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                axpy(d, x, &mut gw[o * n_in..(o + 1) * n_in]);
                gb[o] += d;
            }
            if let Some(next) = next.as_mut() {
                let dx = next.row_mut(r);
                for (o, &d) in dz.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, &w[o * n_in..(o + 1) * n_in], dx);
                    }
                }
            }
        }
        match next {
            Some(m) => upstream = m,
            None => break,
        }
    }
}

/// Gradient of `upstream . logits(x)` with respect to every parameter, for
/// a single input row (a vector-Jacobian product through the network).
pub fn logits_vjp(weights: &WeightState, spec: &NetworkSpec, input: &[f64], upstream: &[f64]) -> Result<GradientVector> {
    weights.check_spec(spec)?;
    if upstream.len() != spec.output_classes {
        return Err(Error::DimensionMismatch {
            context: "logit cotangent",
            expected: spec.output_classes,
            actual: upstream.len(),
        });
    }
    let inputs = Matrix::from_rows(&[input])?;
    check_inputs(spec, &inputs)?;
    let trace = embed_traced(weights, spec, &inputs);
    let h = trace.post.last().expect("non-empty embedding").row(0).to_vec();
    let head = *weights.layout.output_layer();
    let mut grad = GradientVector::zeros(weights.len());
    let n_in = head.inputs;
    {
        let (gw, gb) = grad.values[head.range()].split_at_mut(n_in * head.outputs);
        for (c, &d) in upstream.iter().enumerate() {
            axpy(d, &h, &mut gw[c * n_in..(c + 1) * n_in]);
            gb[c] += d;
        }
    }
    let w = &weights.values[head.weight_range()];
    let mut dfeat = Matrix::zeros(1, n_in);
    for (c, &d) in upstream.iter().enumerate() {
        axpy(d, &w[c * n_in..(c + 1) * n_in], dfeat.row_mut(0));
    }
    backprop_embedding(weights, spec, &inputs, &trace, dfeat, &mut grad.values);
    Ok(grad)
}

/// Append `new_classes` rows to the output head. Existing parameters are
/// copied bit-for-bit; new weight rows are uniform in `[-init_scale,
/// init_scale)` and new biases are zero.
pub fn grow_output(
    weights: &WeightState,
    spec: &NetworkSpec,
    new_classes: usize,
    init_scale: f64,
    seed: u64,
) -> Result<(WeightState, NetworkSpec)> {
    if new_classes == 0 {
        return Err(Error::InvalidArgument("grow_output requires new_classes >= 1".into()));
    }
    weights.check_spec(spec)?;
    let new_spec = spec.with_output_classes(spec.output_classes + new_classes);
    let layout = new_spec.layout();
    let mut values = weights.layout.expand_vector(&weights.values, &layout, 0.0)?;
    let head = *layout.output_layer();
    let w = head.weight_range();
    let first_new = w.start + spec.output_classes * head.inputs;
    uniform_fill(&mut values[first_new..w.end], init_scale, seed)?;
    Ok((WeightState { values, layout }, new_spec))
}

/// Index of the largest logit per row (first index wins ties).
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows)
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::nn::layout::HiddenLayer;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input_dim: 1,
            hidden_layers: vec![HiddenLayer { width: 1, activation: Activation::Relu }],
            output_classes: 1,
            seed: 0,
        }
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let spec = NetworkSpec::mlp(3, 2, 4, Activation::Relu, 0).with_output_classes(5);
        let w = WeightState::zeros(&spec).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]).unwrap();
        let logits = forward(&w, &spec, &x).unwrap();
        assert_eq!((logits.rows, logits.cols), (2, 5));
        assert!(logits.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_evaluated_two_layer_net() {
        // h = relu(2x - 1), logit = 3h + 0.5
        let spec = tiny_spec();
        let mut w = WeightState::zeros(&spec).unwrap();
        w.values.copy_from_slice(&[2.0, -1.0, 3.0, 0.5]);
        let x = Matrix::from_rows(&[vec![1.5], vec![0.25]]).unwrap();
        let logits = forward(&w, &spec, &x).unwrap();
        assert_eq!(logits.data, vec![3.0 * 2.0 + 0.5, 0.5]);
    }

    #[test]
    fn duplicated_rows_give_identical_logits() {
        let spec = NetworkSpec::mlp(4, 2, 8, Activation::Tanh, 3).with_output_classes(3);
        let w = WeightState::init(&spec).unwrap();
        let row = vec![0.3, -0.1, 2.0, 0.7];
        let x = Matrix::from_rows(&[row.clone(), vec![9.0, 9.0, 9.0, 9.0], row]).unwrap();
        let logits = forward(&w, &spec, &x).unwrap();
        assert_eq!(logits.row(0), logits.row(2));
    }

    #[test]
    fn dimension_mismatch_names_dims() {
        let spec = NetworkSpec::mlp(4, 1, 8, Activation::Relu, 3).with_output_classes(3);
        let w = WeightState::init(&spec).unwrap();
        let x = Matrix::zeros(2, 5);
        match forward(&w, &spec, &x) {
            Err(Error::DimensionMismatch { expected: 4, actual: 5, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let spec = NetworkSpec::mlp(2, 1, 3, Activation::Relu, 0).with_output_classes(7);
        let w = WeightState::zeros(&spec).unwrap();
        let batch = LabeledBatch::new(Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.0]]).unwrap(), vec![0, 6]).unwrap();
        let (loss, _) = loss_and_grad(&w, &spec, &batch, Scope::All).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn scope_masks_are_exact() {
        let spec = NetworkSpec::mlp(3, 2, 5, Activation::Tanh, 11).with_output_classes(4);
        let w = WeightState::init(&spec).unwrap();
        let batch = LabeledBatch::new(
            Matrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![-0.4, 0.5, -0.6], vec![1.0, 0.0, -1.0]]).unwrap(),
            vec![0, 3, 2],
        )
        .unwrap();
        let (_, out) = loss_and_grad(&w, &spec, &batch, Scope::OutputOnly).unwrap();
        let (_, emb) = loss_and_grad(&w, &spec, &batch, Scope::EmbeddingOnly).unwrap();
        let (_, all) = loss_and_grad(&w, &spec, &batch, Scope::All).unwrap();
        let e = w.layout.embedding_len();
        assert!(out.values[..e].iter().all(|&g| g == 0.0));
        assert!(emb.values[e..].iter().all(|&g| g == 0.0));
        for i in 0..all.values.len() {
            assert_eq!(out.values[i] + emb.values[i], all.values[i]);
        }
    }

    #[test]
    fn label_and_empty_errors() {
        let spec = NetworkSpec::mlp(2, 1, 3, Activation::Relu, 0).with_output_classes(2);
        let w = WeightState::init(&spec).unwrap();
        let bad = LabeledBatch::new(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap(), vec![2]).unwrap();
        assert!(matches!(
            loss_and_grad(&w, &spec, &bad, Scope::All),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
        let empty = LabeledBatch::new(Matrix::zeros(0, 2), vec![]).unwrap();
        assert!(matches!(loss_and_grad(&w, &spec, &empty, Scope::All), Err(Error::EmptyBatch)));
    }

    #[test]
    fn grow_rejects_zero_and_preserves_old_logits() {
        let spec = NetworkSpec::mlp(3, 2, 6, Activation::Relu, 5).with_output_classes(5);
        let w = WeightState::init(&spec).unwrap();
        assert!(grow_output(&w, &spec, 0, 0.0, 1).is_err());

        let (big, big_spec) = grow_output(&w, &spec, 5, 0.1, 9).unwrap();
        assert_eq!(big_spec.output_classes, 10);
        let x = Matrix::from_rows(&[vec![0.3, 1.0, -0.2], vec![2.0, -1.0, 0.5]]).unwrap();
        let before = forward(&w, &spec, &x).unwrap();
        let after = forward(&big, &big_spec, &x).unwrap();
        for r in 0..2 {
            assert_eq!(&after.row(r)[..5], before.row(r));
        }

        let (zero, zero_spec) = grow_output(&w, &spec, 3, 0.0, 9).unwrap();
        let logits = forward(&zero, &zero_spec, &x).unwrap();
        for r in 0..2 {
            assert_eq!(&logits.row(r)[5..], &[0.0, 0.0, 0.0]);
        }
    }
}
