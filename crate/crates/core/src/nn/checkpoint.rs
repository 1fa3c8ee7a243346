//! Network checkpoints: JSON with explicit `spec`, `layout`, `values` and
//! optional `optimizer` keys. Values use shortest round-trip decimal, so a
//! save/load cycle is exact for every finite double.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::layout::{Layout, NetworkSpec, WeightState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub spec: NetworkSpec,
    pub layout: Layout,
    pub values: Vec<f64>,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
}

impl NetworkCheckpoint {
    pub fn new(spec: &NetworkSpec, weights: &WeightState, optimizer: Option<AdamState>) -> Result<Self> {
        weights.check_spec(spec)?;
        Ok(Self {
            spec: spec.clone(),
            layout: weights.layout.clone(),
            values: weights.values.clone(),
            optimizer,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.layout != self.spec.layout() {
            return Err(Error::LayoutMismatch("checkpoint layout disagrees with its spec".into()));
        }
        if self.values.len() != self.layout.len() {
            return Err(Error::DimensionMismatch {
                context: "checkpoint values",
                expected: self.layout.len(),
                actual: self.values.len(),
            });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint"));
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<WeightState> {
        self.validate()?;
        Ok(WeightState {
            values: self.values.clone(),
            layout: self.layout.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, AdamConfig};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn values_round_trip_exactly(vals in prop::collection::vec(
            prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 17)) {
            let spec = NetworkSpec::mlp(2, 1, 3, Activation::Relu, 0).with_output_classes(2);
            let mut w = WeightState::zeros(&spec).unwrap();
            w.values.copy_from_slice(&vals);
            let mut opt = AdamState::new(w.len(), AdamConfig::default());
            opt.first_moment.copy_from_slice(&vals);
            let ckpt = NetworkCheckpoint::new(&spec, &w, Some(opt)).unwrap();
            let back = NetworkCheckpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
            for (a, b) in back.values.iter().zip(&vals) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back, ckpt);
        }
    }

    #[test]
    fn tampered_layout_rejected() {
        let spec = NetworkSpec::mlp(2, 1, 3, Activation::Relu, 0).with_output_classes(2);
        let w = WeightState::init(&spec).unwrap();
        let mut ckpt = NetworkCheckpoint::new(&spec, &w, None).unwrap();
        ckpt.values.pop();
        assert!(NetworkCheckpoint::from_json(&ckpt.to_json().unwrap()).is_err());
    }
}
