//! Vectorized, seeded toy environments with discrete actions.
//!
//! Each instance owns its RNG stream. On every reset a fresh level seed is
//! drawn from that stream and the level is generated from the level seed
//! alone, so a level can be regenerated from its seed.

mod bandit;
mod chain;
mod keydoor;

pub use bandit::{Bandit, GOOD_ARM};
pub use chain::Chain;
pub use keydoor::{KeyDoor, GOAL_REWARD, KEY_REWARD};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("instance {instance}: action {action} out of range for {num_actions} actions")]
    InvalidAction {
        instance: usize,
        action: usize,
        num_actions: usize,
    },
    #[error("expected {expected} actions, got {got}")]
    WrongActionCount { expected: usize, got: usize },
    #[error("invalid environment config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvName {
    KeyDoor,
    Chain,
    Bandit,
}

impl std::fmt::Display for EnvName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvName::KeyDoor => "keydoor",
            EnvName::Chain => "chain",
            EnvName::Bandit => "bandit",
        })
    }
}

/// Environment selection plus per-environment parameters. Parameters that
/// do not apply to the selected environment are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub name: EnvName,
    pub num_envs: usize,
    /// Episode step limit; each environment has its own default.
    pub max_steps: Option<usize>,
    /// Number of distinct levels; 0 draws from the full 64-bit seed space.
    pub num_levels: u64,
    /// keydoor: side of the square grid, border walls included.
    pub grid_size: usize,
    /// chain: number of positions.
    pub chain_length: usize,
    /// chain: total actions, of which all but left/right do nothing.
    pub chain_actions: usize,
    /// bandit: payout probability of the better arm.
    pub bandit_p_good: f64,
    /// bandit: payout probability of the worse arm.
    pub bandit_p_bad: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            name: EnvName::KeyDoor,
            // 4 workers x 64 environments, collapsed into one process
            num_envs: 256,
            max_steps: None,
            num_levels: 0,
            grid_size: 9,
            chain_length: 10,
            chain_actions: 4,
            bandit_p_good: 0.8,
            bandit_p_bad: 0.2,
        }
    }
}

impl EnvConfig {
    pub fn spec(&self) -> Result<EnvSpec, EnvError> {
        let (obs_dim, num_actions, default_len) = match self.name {
            EnvName::KeyDoor => {
                if self.grid_size < 7 {
                    return Err(EnvError::Config(format!(
                        "keydoor grid_size must be at least 7, got {}",
                        self.grid_size
                    )));
                }
                (KeyDoor::obs_dim(self.grid_size), 4, 100)
            }
            EnvName::Chain => {
                if self.chain_length < 2 || self.chain_actions < 2 {
                    return Err(EnvError::Config(
                        "chain needs chain_length >= 2 and chain_actions >= 2".into(),
                    ));
                }
                (self.chain_length, self.chain_actions, 4 * self.chain_length)
            }
            EnvName::Bandit => {
                let ok = |p: f64| (0.0..=1.0).contains(&p);
                if !ok(self.bandit_p_good) || !ok(self.bandit_p_bad) {
                    return Err(EnvError::Config("bandit probabilities must be in [0, 1]".into()));
                }
                (1, 2, 1)
            }
        };
        let max_episode_len = self.max_steps.unwrap_or(default_len);
        if max_episode_len < 1 {
            return Err(EnvError::Config("max_steps must be at least 1".into()));
        }
        if self.num_envs < 1 {
            return Err(EnvError::Config("num_envs must be at least 1".into()));
        }
        Ok(EnvSpec {
            name: self.name,
            obs_dim,
            num_actions,
            max_episode_len,
            num_levels: self.num_levels,
        })
    }

    fn build(&self) -> Box<dyn Environment> {
        match self.name {
            EnvName::KeyDoor => Box::new(KeyDoor::new(self.grid_size)),
            EnvName::Chain => Box::new(Chain::new(self.chain_length, self.chain_actions)),
            EnvName::Bandit => Box::new(Bandit::new(self.bandit_p_good, self.bandit_p_bad)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: EnvName,
    pub obs_dim: usize,
    pub num_actions: usize,
    pub max_episode_len: usize,
    pub num_levels: u64,
}

/// Outcome of one environment transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub terminal: bool,
}

/// A single episodic task. Observations are written into a caller-owned
/// slice of length `obs_dim`, with every value in [0, 1].
pub trait Environment: Send {
    fn reset(&mut self, level_seed: u64);
    /// `action` is already validated. `rng` is the instance stream, for
    /// environments with stochastic transitions.
    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Transition;
    fn observe(&self, out: &mut [f64]);
    /// Upper bound on |reward| of a single step.
    fn max_abs_reward(&self) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStats {
    pub instance: usize,
    pub ret: f64,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    /// `[num_envs x obs_dim]`, row-major. For a finished instance this is
    /// already the first observation of its next episode.
    pub obs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Episodes that finished on this step.
    pub finished: Vec<EpisodeStats>,
}

struct Instance {
    env: Box<dyn Environment>,
    rng: ChaCha8Rng,
    steps: usize,
    level_seed: u64,
    ret: f64,
}

pub struct VecEnv {
    spec: EnvSpec,
    instances: Vec<Instance>,
    obs: Vec<f64>,
}

impl VecEnv {
    pub fn new(config: &EnvConfig, seed: u64) -> Result<Self, EnvError> {
        let spec = config.spec()?;
        let instances = (0..config.num_envs)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                Instance {
                    env: config.build(),
                    rng,
                    steps: 0,
                    level_seed: 0,
                    ret: 0.0,
                }
            })
            .collect();
        let obs = vec![0.0; config.num_envs * spec.obs_dim];
        let mut v = Self {
            spec,
            instances,
            obs,
        };
        v.reset();
        Ok(v)
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn num_envs(&self) -> usize {
        self.instances.len()
    }

    /// Current observations, `[num_envs x obs_dim]`.
    pub fn observations(&self) -> &[f64] {
        &self.obs
    }

    pub fn level_seeds(&self) -> Vec<u64> {
        self.instances.iter().map(|i| i.level_seed).collect()
    }

    pub fn reset(&mut self) -> Vec<f64> {
        for i in 0..self.instances.len() {
            self.reset_instance(i);
        }
        self.obs.clone()
    }

    fn reset_instance(&mut self, i: usize) {
        let d = self.spec.obs_dim;
        let levels = self.spec.num_levels;
        let inst = &mut self.instances[i];
        inst.level_seed = if levels == 0 {
            inst.rng.random()
        } else {
            inst.rng.random_range(0..levels)
        };
        inst.env.reset(inst.level_seed);
        inst.steps = 0;
        inst.ret = 0.0;
        inst.env.observe(&mut self.obs[i * d..(i + 1) * d]);
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        if actions.len() != self.instances.len() {
            return Err(EnvError::WrongActionCount {
                expected: self.instances.len(),
                got: actions.len(),
            });
        }
        let n = self.spec.num_actions;
        if let Some((i, &a)) = actions.iter().enumerate().find(|(_, &a)| a >= n) {
            return Err(EnvError::InvalidAction {
                instance: i,
                action: a,
                num_actions: n,
            });
        }
        let d = self.spec.obs_dim;
        let mut rewards = Vec::with_capacity(actions.len());
        let mut dones = Vec::with_capacity(actions.len());
        let mut finished = Vec::new();
        for (i, &a) in actions.iter().enumerate() {
            let inst = &mut self.instances[i];
            let tr = inst.env.step(a, &mut inst.rng);
            inst.steps += 1;
            inst.ret += tr.reward;
            // timeouts end the episode like a terminal state
            let done = tr.terminal || inst.steps >= self.spec.max_episode_len;
            rewards.push(tr.reward);
            dones.push(done);
            if done {
                finished.push(EpisodeStats {
                    instance: i,
                    ret: inst.ret,
                    len: inst.steps,
                });
                self.reset_instance(i);
            } else {
                inst.env.observe(&mut self.obs[i * d..(i + 1) * d]);
            }
        }
        Ok(StepResult {
            obs: self.obs.clone(),
            rewards,
            dones,
            finished,
        })
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.instances[0].env.max_abs_reward()
    }
}
