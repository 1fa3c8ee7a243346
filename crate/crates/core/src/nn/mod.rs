//! Feed-forward classifier with an embedding / output-head partition.

mod adam;
mod checkpoint;
mod layout;
mod ops;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::NetworkCheckpoint;
pub use layout::{Activation, HiddenLayer, LayerLayout, Layout, NetworkSpec, Partition, WeightState};
pub use ops::{
    argmax_rows, embed, forward, grow_output, head_logits, logits_vjp, loss_and_grad, GradientVector, LabeledBatch, Matrix,
    Scope,
};
pub(crate) use ops::head_backward;
