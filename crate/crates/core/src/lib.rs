//! Few-shot continual learning laboratory.
//!
//! A small MLP classifier learns a stream of N-way K-shot tasks. The main
//! learner keeps two copies of its parameters: fast weights that fit the
//! replayed task sequence, and slow weights that absorb a small step of
//! each task's solution. Fast-weight training is anchored to the slow
//! weights by a quadratic penalty gated by each parameter's cumulative
//! gradient activity. Replay and regularisation baselines, a synthetic
//! task-stream generator and the evaluation suite share the same network
//! and data so that their metrics are directly comparable.

pub mod baselines;
pub mod consolidation;
pub mod error;
pub mod evalkit;
pub mod nn;
pub mod seed;
pub mod taskgen;
pub mod train;

pub use error::{Error, Result};
