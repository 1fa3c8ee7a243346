use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub width: usize,
    pub activation: Activation,
}

/// Shape of a feed-forward classifier: hidden layers form the embedding,
/// a final linear layer forms the (growing) output head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<HiddenLayer>,
    pub output_classes: usize,
    pub seed: u64,
}

impl NetworkSpec {
    /// `depth` hidden layers of `width` units sharing one activation.
    pub fn mlp(input_dim: usize, depth: usize, width: usize, activation: Activation, seed: u64) -> Self {
        Self {
            input_dim,
            hidden_layers: vec![HiddenLayer { width, activation }; depth],
            output_classes: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        if self.hidden_layers.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one hidden layer is required for the embedding".into(),
            ));
        }
        if self.hidden_layers.iter().any(|h| h.width == 0) {
            return Err(Error::InvalidArgument("hidden widths must be positive".into()));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.hidden_layers.last().map_or(0, |h| h.width)
    }

    pub fn layout(&self) -> Layout {
        let mut layers = Vec::with_capacity(self.hidden_layers.len() + 1);
        let mut offset = 0;
        let mut inputs = self.input_dim;
        for h in &self.hidden_layers {
            layers.push(LayerLayout {
                offset,
                inputs,
                outputs: h.width,
                partition: Partition::Embedding,
            });
            offset += (inputs + 1) * h.width;
            inputs = h.width;
        }
        layers.push(LayerLayout {
            offset,
            inputs,
            outputs: self.output_classes,
            partition: Partition::Output,
        });
        Layout { layers }
    }

    pub fn with_output_classes(&self, classes: usize) -> Self {
        Self {
            output_classes: classes,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Embedding,
    Output,
}

/// One dense layer inside the flat parameter vector: an `outputs x inputs`
/// row-major weight block followed by `outputs` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLayout {
    pub offset: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub partition: Partition,
}

impl LayerLayout {
    pub fn param_count(&self) -> usize {
        (self.inputs + 1) * self.outputs
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.param_count()
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub layers: Vec<LayerLayout>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.offset + l.param_count())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameters in `0..embedding_len()` belong to the embedding.
    pub fn embedding_len(&self) -> usize {
        self.output_layer().offset
    }

    pub fn output_layer(&self) -> &LayerLayout {
        self.layers.last().expect("layout always has an output layer")
    }

    pub fn output_range(&self) -> std::ops::Range<usize> {
        self.output_layer().range()
    }

    pub fn embedding_layers(&self) -> &[LayerLayout] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output_classes(&self) -> usize {
        self.output_layer().outputs
    }

    /// Re-express a vector aligned with `self` in the layout `target`, which
    /// must differ from `self` only by extra output rows. Entries for new rows
    /// are `fill`.
    pub fn expand_vector(&self, values: &[f64], target: &Layout, fill: f64) -> Result<Vec<f64>> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "expand_vector",
                expected: self.len(),
                actual: values.len(),
            });
        }
        let same_embedding = self.embedding_layers() == target.embedding_layers();
        let (old, new) = (self.output_layer(), target.output_layer());
        if !same_embedding || old.inputs != new.inputs || new.outputs < old.outputs {
            return Err(Error::LayoutMismatch(
                "target layout is not an output-row expansion".into(),
            ));
        }
        let mut out = vec![fill; target.len()];
        out[..self.embedding_len()].copy_from_slice(&values[..self.embedding_len()]);
        let old_w = old.weight_range();
        let new_w = new.weight_range();
        out[new_w.start..new_w.start + old_w.len()].copy_from_slice(&values[old_w]);
        let old_b = old.bias_range();
        let new_b = new.bias_range();
        out[new_b.start..new_b.start + old_b.len()].copy_from_slice(&values[old_b]);
        Ok(out)
    }
}

/// Flat parameter vector plus the layout that gives it structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightState {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl WeightState {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        Ok(Self {
            values: vec![0.0; layout.len()],
            layout,
        })
    }

    /// He-uniform weights for relu layers, Xavier-uniform for tanh and the
    /// output layer; zero biases. Seeded by `spec.seed`.
    pub fn init(spec: &NetworkSpec) -> Result<Self> {
        let mut state = Self::zeros(spec)?;
        let mut rng = seed::rng(seed::derive(spec.seed, "init"));
        let activations: Vec<Option<Activation>> = spec
            .hidden_layers
            .iter()
            .map(|h| Some(h.activation))
            .chain(std::iter::once(None))
            .collect();
        for (layer, act) in state.layout.layers.clone().iter().zip(activations) {
            if layer.outputs == 0 {
                continue;
            }
            let fan_in = layer.inputs as f64;
            let fan_out = layer.outputs as f64;
            let limit = match act {
                Some(Activation::Relu) => (6.0 / fan_in).sqrt(),
                _ => (6.0 / (fan_in + fan_out)).sqrt(),
            };
            let dist = Uniform::new(-limit, limit).expect("finite positive limit");
            for w in &mut state.values[layer.weight_range()] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn embedding(&self) -> &[f64] {
        &self.values[..self.layout.embedding_len()]
    }

    pub fn embedding_mut(&mut self) -> &mut [f64] {
        let n = self.layout.embedding_len();
        &mut self.values[..n]
    }

    pub fn output(&self) -> &[f64] {
        &self.values[self.layout.output_range()]
    }

    pub fn output_mut(&mut self) -> &mut [f64] {
        let r = self.layout.output_range();
        &mut self.values[r]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_spec(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layout != spec.layout() || self.values.len() != self.layout.len() {
            return Err(Error::LayoutMismatch(format!(
                "weights have {} parameters / {} classes, spec implies {} / {}",
                self.values.len(),
                self.layout.output_classes(),
                spec.layout().len(),
                spec.output_classes
            )));
        }
        Ok(())
    }

    /// Drop the output head entirely (zero classes), keeping the embedding.
    pub fn without_head(&self, spec: &NetworkSpec) -> (WeightState, NetworkSpec) {
        let spec = spec.with_output_classes(0);
        let layout = spec.layout();
        let values = self.values[..layout.embedding_len()].to_vec();
        (WeightState { values, layout }, spec)
    }
}

/// Samples a zero-mean uniform of half-width `scale` (exactly zero when
/// `scale == 0`).
pub(crate) fn uniform_fill(out: &mut [f64], scale: f64, seed: u64) -> Result<()> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("init_scale must be finite and >= 0, got {scale}")));
    }
    if scale == 0.0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    }
    let mut rng = seed::rng(seed);
    for v in out {
        *v = rng.random_range(-scale..scale);
    }
    Ok(())
}
