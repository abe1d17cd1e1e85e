//! Policy-phase and auxiliary-phase training for PPG variants, and PPO.

pub mod config;
pub mod losses;
pub mod metrics;
pub mod trainer;

pub use config::{ConfigError, Hyperparameters, PhasicConfig, Variant};
pub use losses::{
    entropy, loss_aux, loss_clip, loss_clip_grad, loss_joint, loss_joint_grad, loss_kl_policy,
    loss_value, loss_value_grad, policy_loss, LossError, PolicyLoss, Surrogate,
};
pub use metrics::{final_return, read_metrics, MetricsRow, MetricsWriter, METRICS_SCHEMA};
pub use trainer::{AuxReport, GradientProbe, Nets, PhasicError, TrainSummary, Trainer};
