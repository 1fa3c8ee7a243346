use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LabeledBatch;
use crate::taskgen::{ClassIndex, LabeledExample, TaskDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub task_index: usize,
    pub example: LabeledExample,
}

/// Exact memory of every training example seen, in insertion order.
///
/// Reads are counted so callers can check which steps touch the memory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReplayBuffer {
    entries: Vec<ReplayEntry>,
    #[serde(skip)]
    reads: Cell<u64>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, task: &TaskDataset) {
        self.entries.extend(task.examples.iter().map(|e| ReplayEntry {
            task_index: task.task_index,
            example: e.clone(),
        }));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn reads(&self) -> u64 {
        self.reads.get()
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        self.reads.set(self.reads.get() + 1);
        &self.entries
    }

    /// The whole memory as a labelled batch.
    pub fn batch(&self, classes: &ClassIndex) -> Result<LabeledBatch> {
        if self.entries.is_empty() {
            return Err(Error::EmptyReplay);
        }
        classes.batch(self.entries().iter().map(|e| &e.example))
    }
}

impl PartialEq for ReplayBuffer {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}
