use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::AdvantageConfig;
use crate::env::EnvConfig;
use crate::nn::NnConfig;
use crate::rollout::RolloutConfig;

/// Which training algorithm, and how its losses are wired to networks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Disjoint policy and value networks with periodic auxiliary phases.
    #[default]
    PpgDual,
    /// One network; value gradient stopped at the torso during the policy
    /// phase and allowed through during the auxiliary phase.
    PpgSingleNet,
    /// Fixed-weight KL penalty in place of the clipped surrogate.
    PpgKlPenalty,
    /// No value-network training in the auxiliary phase; more value epochs
    /// in the policy phase instead.
    PpgNoAuxValue,
    /// PPO with one network and a weighted joint loss.
    PpoShared,
    /// PPO with separate policy and value networks.
    PpoSeparate,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::PpgDual,
        Variant::PpgSingleNet,
        Variant::PpgKlPenalty,
        Variant::PpgNoAuxValue,
        Variant::PpoShared,
        Variant::PpoSeparate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::PpgDual => "ppg-dual",
            Variant::PpgSingleNet => "ppg-single-net",
            Variant::PpgKlPenalty => "ppg-kl-penalty",
            Variant::PpgNoAuxValue => "ppg-no-aux-value",
            Variant::PpoShared => "ppo-shared",
            Variant::PpoSeparate => "ppo-separate",
        }
    }

    /// Runs auxiliary phases.
    pub fn is_ppg(self) -> bool {
        !matches!(self, Variant::PpoShared | Variant::PpoSeparate)
    }

    /// Policy and value share one network.
    pub fn shares_network(self) -> bool {
        matches!(self, Variant::PpgSingleNet | Variant::PpoShared)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                format!("unknown variant `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// Algorithm settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhasicConfig {
    pub variant: Variant,
    /// Policy iterations per phase.
    pub n_pi: usize,
    /// Policy epochs per iteration.
    pub e_pi: usize,
    /// Value epochs per iteration. Unset means 1, or 2 for
    /// `ppg-no-aux-value`.
    pub e_v: Option<usize>,
    /// Epochs over the replay buffer per auxiliary phase.
    pub e_aux: usize,
    pub beta_clone: f64,
    pub entropy_coef: f64,
    pub clip_eps: f64,
    /// KL penalty weight for `ppg-kl-penalty`.
    pub beta_pi: f64,
    /// Value-loss weight in the `ppo-shared` joint loss.
    pub vf_coef: f64,
    /// Epochs per iteration for the PPO variants (policy and value alike).
    pub ppo_epochs: usize,
    pub total_timesteps: u64,
}

impl Default for PhasicConfig {
    fn default() -> Self {
        Self {
            variant: Variant::PpgDual,
            n_pi: 32,
            e_pi: 1,
            e_v: None,
            e_aux: 6,
            beta_clone: 1.0,
            entropy_coef: 0.01,
            clip_eps: 0.2,
            beta_pi: 1.0,
            vf_coef: 0.5,
            ppo_epochs: 3,
            total_timesteps: 2_000_000,
        }
    }
}

impl PhasicConfig {
    pub fn value_epochs(&self) -> usize {
        self.e_v.unwrap_or(match self.variant {
            Variant::PpgNoAuxValue => 2,
            _ => 1,
        })
    }

    /// (policy epochs, value epochs) run in each policy iteration.
    pub fn epochs(&self) -> (usize, usize) {
        match self.variant {
            Variant::PpoShared | Variant::PpoSeparate => (self.ppo_epochs, self.ppo_epochs),
            _ => (self.e_pi, self.value_epochs()),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Every tunable of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub env: EnvConfig,
    pub nn: NnConfig,
    pub advantage: AdvantageConfig,
    pub rollout: RolloutConfig,
    pub phasic: PhasicConfig,
}

impl Hyperparameters {
    /// Transitions per policy iteration.
    pub fn batch_size(&self) -> usize {
        self.env.num_envs * self.rollout.horizon
    }

    /// Policy iterations needed to reach the step budget.
    pub fn iterations(&self) -> u64 {
        self.phasic.total_timesteps.div_ceil(self.batch_size() as u64)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.phasic;
        let a = &self.advantage;
        let r = &self.rollout;
        let n = &self.nn;
        self.env
            .spec()
            .map_err(|e| ConfigError::new("env", e.to_string()))?;
        let need = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::new(field, msg))
            }
        };
        need(r.horizon >= 1, "rollout.horizon", "must be at least 1")?;
        need(r.minibatches >= 1, "rollout.minibatches", "must be at least 1")?;
        let batch = self.batch_size();
        need(
            batch.is_multiple_of(r.minibatches),
            "rollout.minibatches",
            &format!("{} does not divide the batch of {batch} transitions", r.minibatches),
        )?;
        if p.variant.is_ppg() {
            need(
                r.aux_minibatches_per_n_pi >= 1,
                "rollout.aux_minibatches_per_n_pi",
                "must be at least 1",
            )?;
            need(
                batch.is_multiple_of(r.aux_minibatches_per_n_pi),
                "rollout.aux_minibatches_per_n_pi",
                &format!(
                    "{} does not divide the batch of {batch} transitions",
                    r.aux_minibatches_per_n_pi
                ),
            )?;
        }
        need(p.n_pi >= 1, "phasic.n_pi", "must be at least 1")?;
        need(p.clip_eps > 0.0 && p.clip_eps < 1.0, "phasic.clip_eps", "must be in (0, 1)")?;
        need(p.beta_clone >= 0.0, "phasic.beta_clone", "must be non-negative")?;
        need(p.beta_pi >= 0.0, "phasic.beta_pi", "must be non-negative")?;
        need(p.entropy_coef.is_finite(), "phasic.entropy_coef", "must be finite")?;
        need(p.vf_coef >= 0.0, "phasic.vf_coef", "must be non-negative")?;
        need(p.total_timesteps >= 1, "phasic.total_timesteps", "must be at least 1")?;
        need(a.gamma > 0.0 && a.gamma <= 1.0, "advantage.gamma", "must be in (0, 1]")?;
        need((0.0..=1.0).contains(&a.lambda), "advantage.lambda", "must be in [0, 1]")?;
        if let Some(c) = a.reward_clip {
            need(c > 0.0, "advantage.reward_clip", "must be positive")?;
        }
        need(n.learning_rate >= 0.0, "nn.learning_rate", "must be non-negative")?;
        need(n.hidden.iter().all(|&h| h > 0), "nn.hidden", "layer sizes must be positive")?;
        need(
            (0.0..1.0).contains(&n.adam_beta1) && (0.0..1.0).contains(&n.adam_beta2),
            "nn.adam_beta1",
            "Adam betas must be in [0, 1)",
        )?;
        need(n.adam_eps > 0.0, "nn.adam_eps", "must be positive")?;
        if let Some(g) = n.max_grad_norm {
            need(g > 0.0, "nn.max_grad_norm", "must be positive")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_table() {
        let h = Hyperparameters::default();
        let p = &h.phasic;
        assert_eq!((p.n_pi, p.e_pi, p.value_epochs(), p.e_aux), (32, 1, 1, 6));
        assert_eq!(p.beta_clone, 1.0);
        assert_eq!(h.rollout.aux_minibatches_per_n_pi, 16);
        assert_eq!((h.advantage.gamma, h.advantage.lambda), (0.999, 0.95));
        assert_eq!((h.rollout.horizon, h.rollout.minibatches), (256, 8));
        assert_eq!((p.entropy_coef, p.clip_eps), (0.01, 0.2));
        assert!(h.advantage.normalize_rewards);
        assert_eq!(h.nn.learning_rate, 5e-4);
        assert_eq!(h.env.num_envs, 256);
        assert_eq!(p.beta_pi, 1.0);
        h.validate().unwrap();
    }

    #[test]
    fn no_aux_value_raises_value_epochs() {
        let mut p = PhasicConfig {
            variant: Variant::PpgNoAuxValue,
            ..Default::default()
        };
        assert_eq!(p.value_epochs(), 2);
        p.e_v = Some(4);
        assert_eq!(p.epochs(), (1, 4));
        p.variant = Variant::PpoShared;
        assert_eq!(p.epochs(), (3, 3));
    }

    #[test]
    fn rejects_indivisible_minibatches() {
        let mut h = Hyperparameters::default();
        h.env.num_envs = 3;
        h.rollout.horizon = 10;
        let e = h.validate().unwrap_err();
        assert_eq!(e.field, "rollout.minibatches");
        h.rollout.minibatches = 5;
        h.rollout.aux_minibatches_per_n_pi = 4;
        assert_eq!(h.validate().unwrap_err().field, "rollout.aux_minibatches_per_n_pi");
        h.phasic.variant = Variant::PpoShared;
        h.validate().unwrap();
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("ppg".parse::<Variant>().is_err());
    }
}
