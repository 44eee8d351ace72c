//! Minimal feed-forward networks: parameter vectors, dense layers with
//! backpropagation, softmax cross-entropy and SGD.

pub mod loss;
pub mod mlp;
pub mod params;

pub use loss::{argmax, softmax, softmax_cross_entropy};
pub use mlp::{backward, Activation, MlpSpec, Trace};
pub use params::{sgd_step, Layout, ParamVector, Segment};

use serde::{Deserialize, Serialize};

use crate::error::{FedFgError, Result};

/// Local optimisation settings shared by classifier and generator training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Learning rate for the extractor and classifier.
    pub eta1: f64,
    /// Learning rate for the flow-matching generator.
    pub eta2: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub flow_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta1: 0.001,
            eta2: 0.001,
            batch_size: 64,
            local_epochs: 10,
            flow_epochs: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta1 > 0.0 && self.eta1.is_finite()) {
            return Err(FedFgError::config("train.eta1", "must be a positive finite number"));
        }
        if !(self.eta2 > 0.0 && self.eta2.is_finite()) {
            return Err(FedFgError::config("train.eta2", "must be a positive finite number"));
        }
        if self.batch_size == 0 {
            return Err(FedFgError::config("train.batch_size", "must be at least 1"));
        }
        Ok(())
    }
}
