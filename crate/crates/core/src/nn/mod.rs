//! Small differentiable stack: tanh MLPs with linear heads, a categorical
//! action distribution, hand-written reverse-mode gradients and Adam.

mod adam;
mod checkpoint;
mod dist;
mod layers;
mod matrix;
mod nets;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{restore_values, Checkpoint, CheckpointGroup, CHECKPOINT_VERSION};
pub use dist::{kl_divergence, kl_grad_wrt_new, CategoricalDist};
pub use layers::{orthogonal, Linear, Mlp};
pub use matrix::Matrix;
pub use nets::{HeadGrads, PolicyForward, PolicyNet, ValueForward, ValueNet};
pub use params::{ParameterSet, Tensor};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("action {action} out of range for {num_actions} actions (row {row})")]
    ActionOutOfRange {
        row: usize,
        action: usize,
        num_actions: usize,
    },
    #[error("non-finite gradient in parameter `{name}` at element {index}")]
    NonFiniteGradient { name: String, index: usize },
    #[error("optimizer step produced non-finite parameters")]
    NonFiniteParameters,
    #[error("optimizer step called with no gradients recorded")]
    EmptyGradients,
    #[error("value gradient given but the network has no value head")]
    MissingValueHead,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Network and optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnConfig {
    pub hidden: Vec<usize>,
    pub precision: Precision,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; off when unset.
    pub max_grad_norm: Option<f64>,
}

impl Default for NnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            precision: Precision::F64,
            learning_rate: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_grad_norm: None,
        }
    }
}

impl NnConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}
