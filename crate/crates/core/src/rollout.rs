//! On-policy data collection, minibatch partitioning and the replay buffer
//! used by the auxiliary phase.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{compute_gae, AdvantageError, GaeConfig, RewardNormalizer};
use crate::env::{EnvError, EpisodeStats, VecEnv};
use crate::nn::{CategoricalDist, Matrix, NnError, PolicyNet};
use crate::real::Real;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("env step {step}: {source}")]
    Env { step: usize, source: EnvError },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error("{k} minibatches do not evenly divide {n} samples")]
    Indivisible { n: usize, k: usize },
    #[error("replay buffer: {0}")]
    Buffer(&'static str),
    #[error("rollout dump: {0}")]
    Dump(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    /// Timesteps per rollout, per environment instance.
    pub horizon: usize,
    /// Minibatches per policy-phase epoch.
    pub minibatches: usize,
    /// Aux-phase minibatches per epoch, per stored rollout.
    pub aux_minibatches_per_n_pi: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            horizon: 256,
            minibatches: 8,
            aux_minibatches_per_n_pi: 16,
        }
    }
}

/// Anything that can score observations: action logits plus a state-value
/// estimate per row.
pub trait Actor<T: Real> {
    fn act(&self, obs: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>), NnError>;
}

impl<T: Real, F> Actor<T> for F
where
    F: Fn(&Matrix<T>) -> Result<(Matrix<T>, Vec<T>), NnError>,
{
    fn act(&self, obs: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>), NnError> {
        self(obs)
    }
}

/// `num_envs x horizon` transitions, env-major (`w * horizon + t`).
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch<T> {
    pub num_envs: usize,
    pub horizon: usize,
    pub obs: Matrix<T>,
    pub actions: Vec<usize>,
    pub raw_rewards: Vec<f64>,
    /// Rewards after normalization (equal to `raw_rewards` when disabled).
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// log pi_old(a_t | s_t) under the acting policy.
    pub logp_old: Vec<T>,
    /// Full acting-policy logits, for exact KL terms.
    pub logits_old: Matrix<T>,
    /// `num_envs x (horizon + 1)`: predictions plus the bootstrap value.
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
    /// Episodes that ended during collection.
    pub finished: Vec<EpisodeStats>,
}

impl<T: Real> RolloutBatch<T> {
    pub fn len(&self) -> usize {
        self.num_envs * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value predictions for the stored states, without bootstrap values.
    pub fn value_preds(&self) -> Vec<f64> {
        let h = self.horizon;
        (0..self.num_envs)
            .flat_map(|w| self.values[w * (h + 1)..w * (h + 1) + h].iter().copied())
            .collect()
    }
}

/// Runs `horizon` synchronous steps of every instance under `actor`,
/// sampling actions with `rng`, then normalizes rewards (when a normalizer
/// is given) and computes advantages and targets.
pub fn collect<T: Real, A: Actor<T> + ?Sized>(
    env: &mut VecEnv,
    actor: &A,
    normalizer: Option<&mut RewardNormalizer>,
    gae: GaeConfig,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutBatch<T>, RolloutError> {
    let w = env.num_envs();
    let d = env.spec().obs_dim;
    let k = env.spec().num_actions;
    let n = w * horizon;
    let mut obs = Matrix::zeros(n, d);
    let mut logits_old = Matrix::zeros(n, k);
    let mut actions = vec![0; n];
    let mut raw_rewards = vec![0.0; n];
    let mut dones = vec![false; n];
    let mut logp_old = vec![T::zero(); n];
    let mut values = vec![0.0; w * (horizon + 1)];
    let mut finished = Vec::new();

    for t in 0..horizon {
        let cur = Matrix::<T>::from_f64(w, d, env.observations());
        let (logits, v) = actor.act(&cur)?;
        let dist = CategoricalDist::new(logits);
        let a = dist.sample(rng);
        let lp = dist.log_prob(&a)?;
        for i in 0..w {
            let row = i * horizon + t;
            obs.row_mut(row).copy_from_slice(cur.row(i));
            logits_old.row_mut(row).copy_from_slice(dist.logits().row(i));
            actions[row] = a[i];
            logp_old[row] = lp[i];
            values[i * (horizon + 1) + t] = v[i].f64();
        }
        let step = env.step(&a).map_err(|source| RolloutError::Env { step: t, source })?;
        for i in 0..w {
            raw_rewards[i * horizon + t] = step.rewards[i];
            dones[i * horizon + t] = step.dones[i];
        }
        finished.extend(step.finished);
    }
    let last = Matrix::<T>::from_f64(w, d, env.observations());
    let (_, boot) = actor.act(&last)?;
    for i in 0..w {
        values[i * (horizon + 1) + horizon] = boot[i].f64();
    }

    let rewards = match normalizer {
        Some(norm) => norm.normalize(&raw_rewards, &dones)?,
        None => raw_rewards.clone(),
    };
    let out = compute_gae(&rewards, &values, &dones, w, gae)?;
    Ok(RolloutBatch {
        num_envs: w,
        horizon,
        obs,
        actions,
        raw_rewards,
        rewards,
        dones,
        logp_old,
        logits_old,
        values,
        advantages: out.advantages,
        targets: out.targets,
        finished,
    })
}

/// Shuffled partition of `0..n` into `k` equal index sets.
pub fn minibatches<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<Vec<usize>>, RolloutError> {
    if k == 0 || !n.is_multiple_of(k) {
        return Err(RolloutError::Indivisible { n, k });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    Ok(idx.chunks(n / k).map(<[usize]>::to_vec).collect())
}

/// States and value targets from up to `capacity` rollouts, plus the policy
/// snapshot taken right before the auxiliary phase.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    obs: Matrix<T>,
    targets: Vec<T>,
    rollouts: usize,
    capacity: usize,
    frozen: Option<Matrix<T>>,
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(obs_dim: usize, capacity: usize) -> Self {
        Self {
            obs: Matrix::zeros(0, obs_dim),
            targets: Vec::new(),
            rollouts: 0,
            capacity,
            frozen: None,
        }
    }

    pub fn clear(&mut self) {
        self.obs = Matrix::zeros(0, self.obs.cols());
        self.targets.clear();
        self.rollouts = 0;
        self.frozen = None;
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn rollouts(&self) -> usize {
        self.rollouts
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn obs(&self) -> &Matrix<T> {
        &self.obs
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    pub fn frozen_logits(&self) -> Option<&Matrix<T>> {
        self.frozen.as_ref()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen.is_some()
    }

    pub fn add(&mut self, batch: &RolloutBatch<T>) -> Result<(), RolloutError> {
        if self.frozen.is_some() {
            return Err(RolloutError::Buffer("add after the policy was frozen"));
        }
        if self.rollouts >= self.capacity {
            return Err(RolloutError::Buffer("buffer already holds its rollout capacity"));
        }
        self.obs.push_rows(&batch.obs);
        self.targets.extend(batch.targets.iter().map(|&x| T::c(x)));
        self.rollouts += 1;
        Ok(())
    }

    /// Stores the current policy's logits for every buffered state.
    pub fn freeze(&mut self, policy: &PolicyNet<T>) -> Result<(), RolloutError> {
        if self.is_empty() {
            return Err(RolloutError::Buffer("freeze before any rollout was added"));
        }
        if self.frozen.is_some() {
            return Err(RolloutError::Buffer("policy already frozen for this phase"));
        }
        const CHUNK: usize = 4096;
        let mut logits = Matrix::zeros(0, policy.num_actions());
        let mut start = 0;
        while start < self.len() {
            let end = (start + CHUNK).min(self.len());
            logits.push_rows(&policy.logits(&self.obs.slice_rows(start, end))?);
            start = end;
        }
        self.frozen = Some(logits);
        Ok(())
    }

    /// Hash of the exact bit patterns of the stored value targets.
    pub fn targets_checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for t in &self.targets {
            h.write_u64(t.f64().to_bits());
        }
        h.write_usize(self.targets.len());
        h.finish()
    }
}

// Rollout dump, little-endian, version 1:
//
//   magic "PPGROLL\0" | version u32 | precision u8 (4 or 8)
//   num_envs u32 | horizon u32 | obs_dim u32 | num_actions u32
//   then, with N = num_envs * horizon, env-major:
//   obs        N * obs_dim     reals
//   actions    N               u32
//   raw_rewards, rewards       N f64 each
//   dones      N               u8
//   logp_old   N               reals
//   logits_old N * num_actions reals
//   values     num_envs * (horizon + 1) f64
//   advantages, targets        N f64 each
const DUMP_MAGIC: &[u8; 8] = b"PPGROLL\0";
pub const DUMP_VERSION: u32 = 1;

impl<T: Real> RolloutBatch<T> {
    pub fn to_dump_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DUMP_MAGIC);
        out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
        out.push(T::BYTES);
        for x in [self.num_envs, self.horizon, self.obs.cols(), self.logits_old.cols()] {
            out.extend_from_slice(&(x as u32).to_le_bytes());
        }
        self.obs.as_slice().iter().for_each(|v| v.write_le(&mut out));
        for &a in &self.actions {
            out.extend_from_slice(&(a as u32).to_le_bytes());
        }
        let f64s = |out: &mut Vec<u8>, xs: &[f64]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        f64s(&mut out, &self.raw_rewards);
        f64s(&mut out, &self.rewards);
        out.extend(self.dones.iter().map(|&d| d as u8));
        self.logp_old.iter().for_each(|v| v.write_le(&mut out));
        self.logits_old.as_slice().iter().for_each(|v| v.write_le(&mut out));
        f64s(&mut out, &self.values);
        f64s(&mut out, &self.advantages);
        f64s(&mut out, &self.targets);
        out
    }

    pub fn from_dump_bytes(bytes: &[u8]) -> Result<Self, RolloutError> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], RolloutError> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| RolloutError::Dump("truncated file".into()))?;
            pos += n;
            Ok(s)
        };
        if take(8)? != DUMP_MAGIC {
            return Err(RolloutError::Dump("bad magic".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != DUMP_VERSION {
            return Err(RolloutError::Dump(format!("unsupported version {version}")));
        }
        if take(1)?[0] != T::BYTES {
            return Err(RolloutError::Dump("precision mismatch".into()));
        }
        let w = u32_at(take(4)?) as usize;
        let h = u32_at(take(4)?) as usize;
        let d = u32_at(take(4)?) as usize;
        let k = u32_at(take(4)?) as usize;
        let n = w * h;
        let wb = T::BYTES as usize;
        let obs = Matrix::from_vec(n, d, take(n * d * wb)?.chunks_exact(wb).map(T::read_le).collect());
        let actions = take(n * 4)?.chunks_exact(4).map(|c| u32_at(c) as usize).collect();
        let mut f64s = |m: usize| -> Result<Vec<f64>, RolloutError> {
            Ok(take(m * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let raw_rewards = f64s(n)?;
        let rewards = f64s(n)?;
        let dones = take(n)?.iter().map(|&b| b != 0).collect();
        let logp_old = take(n * wb)?.chunks_exact(wb).map(T::read_le).collect();
        let logits_old = Matrix::from_vec(n, k, take(n * k * wb)?.chunks_exact(wb).map(T::read_le).collect());
        let mut f64s = |m: usize| -> Result<Vec<f64>, RolloutError> {
            Ok(take(m * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let values = f64s(w * (h + 1))?;
        let advantages = f64s(n)?;
        let targets = f64s(n)?;
        if pos != bytes.len() {
            return Err(RolloutError::Dump("trailing bytes".into()));
        }
        Ok(Self {
            num_envs: w,
            horizon: h,
            obs,
            actions,
            raw_rewards,
            rewards,
            dones,
            logp_old,
            logits_old,
            values,
            advantages,
            targets,
            finished: Vec::new(),
        })
    }

    pub fn write_dump(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_dump_bytes())
    }

    pub fn read_dump(path: &Path) -> Result<Self, RolloutError> {
        let bytes = std::fs::read(path).map_err(|e| RolloutError::Dump(format!("{}: {e}", path.display())))?;
        Self::from_dump_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, EnvName};
    use rand::SeedableRng;
    use std::collections::HashSet;

    fn env(name: EnvName, w: usize, seed: u64) -> VecEnv {
        VecEnv::new(
            &EnvConfig {
                name,
                num_envs: w,
                ..Default::default()
            },
            seed,
        )
        .unwrap()
    }

    fn policy(seed: u64, d: usize, k: usize) -> PolicyNet<f64> {
        PolicyNet::new(d, k, &[8], false, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn actor(p: &PolicyNet<f64>) -> impl Fn(&Matrix<f64>) -> Result<(Matrix<f64>, Vec<f64>), NnError> + '_ {
        move |obs| {
            let f = p.forward(obs, false)?;
            Ok((f.logits, f.aux_value))
        }
    }

    #[test]
    fn collection_is_deterministic() {
        let run = || {
            let mut e = env(EnvName::KeyDoor, 3, 11);
            let p = policy(0, e.spec().obs_dim, 4);
            let mut norm = RewardNormalizer::new(3, 0.999, Some(10.0));
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let a = actor(&p);
            let b: RolloutBatch<f64> =
                collect(&mut e, &a, Some(&mut norm), GaeConfig::default(), 40, &mut rng).unwrap();
            b
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_step_log_prob_matches_acting_policy() {
        let mut e = env(EnvName::Chain, 1, 2);
        let p = policy(1, e.spec().obs_dim, e.spec().num_actions);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let first = Matrix::from_f64(1, e.spec().obs_dim, e.observations());
        let b: RolloutBatch<f64> = collect(&mut e, &actor(&p), None, GaeConfig::default(), 1, &mut rng).unwrap();
        assert_eq!(b.len(), 1);
        let d = CategoricalDist::new(p.logits(&first).unwrap());
        let lp = d.log_prob(&b.actions).unwrap()[0];
        assert!((lp - b.logp_old[0]).abs() <= 1e-12);
        assert_eq!(b.rewards, b.raw_rewards);
    }

    #[test]
    fn keydoor_batch_respects_episode_boundaries() {
        let mut e = env(EnvName::KeyDoor, 4, 3);
        let p = policy(2, e.spec().obs_dim, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = GaeConfig::default();
        let b: RolloutBatch<f64> = collect(&mut e, &actor(&p), None, cfg, 256, &mut rng).unwrap();
        assert_eq!(b.len(), 1024);
        assert_eq!(b.obs.rows(), 1024);
        // rescan: episode count from dones equals finished episodes, and the
        // advantage right before each boundary sees no bootstrap
        let ends = b.dones.iter().filter(|&&d| d).count();
        assert_eq!(ends, b.finished.len());
        for w in 0..4 {
            for t in 0..256 {
                let i = w * 256 + t;
                if b.dones[i] {
                    let v = b.values[w * 257 + t];
                    assert!((b.advantages[i] - (b.rewards[i] - v)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn minibatch_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mbs = minibatches(1024, 8, &mut rng).unwrap();
        assert_eq!(mbs.len(), 8);
        let mut all: Vec<usize> = mbs.iter().flatten().copied().collect();
        assert!(mbs.iter().all(|m| m.len() == 128));
        all.sort();
        assert_eq!(all, (0..1024).collect::<Vec<_>>());

        let one = minibatches(16, 1, &mut rng).unwrap();
        let mut s = one[0].clone();
        s.sort();
        assert_eq!(s, (0..16).collect::<Vec<_>>());

        assert!(matches!(minibatches(10, 3, &mut rng), Err(RolloutError::Indivisible { n: 10, k: 3 })));
        assert!(minibatches(10, 0, &mut rng).is_err());
    }

    #[test]
    fn successive_epochs_shuffle_differently() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut seen = HashSet::new();
        for _ in 0..10 {
            seen.insert(minibatches(256, 4, &mut rng).unwrap());
        }
        assert_eq!(seen.len(), 10);
    }

    fn batch(seed: u64) -> RolloutBatch<f64> {
        let mut e = env(EnvName::KeyDoor, 2, seed);
        let p = policy(seed, e.spec().obs_dim, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = actor(&p);
        
        collect(&mut e, &a, None, GaeConfig::default(), 16, &mut rng).unwrap()
    }

    #[test]
    fn buffer_fill_and_freeze() {
        let p = policy(0, 246, 4);
        let mut buf = ReplayBuffer::new(246, 3);
        assert!(matches!(buf.freeze(&p), Err(RolloutError::Buffer(_))));
        for s in 0..3 {
            buf.add(&batch(s)).unwrap();
        }
        assert!(buf.add(&batch(9)).is_err());
        assert_eq!(buf.len(), 3 * 32);
        buf.freeze(&p).unwrap();
        assert!(buf.add(&batch(9)).is_err());
        assert!(buf.freeze(&p).is_err());

        let frozen = buf.frozen_logits().unwrap().clone();
        let now = CategoricalDist::new(p.logits(buf.obs()).unwrap());
        let kl = CategoricalDist::new(frozen.clone()).kl(&now);
        assert!(kl.iter().all(|&x| x == 0.0));

        // snapshot semantics: perturbing the policy leaves stored logits alone
        let mut q = p.clone();
        q.params_mut().tensors_mut().iter_mut().for_each(|t| t.value.iter_mut().for_each(|v| *v += 0.1));
        assert_eq!(buf.frozen_logits().unwrap(), &frozen);
        let sum = buf.targets_checksum();
        assert_eq!(sum, buf.targets_checksum());

        buf.clear();
        assert!(buf.is_empty() && !buf.is_frozen() && buf.rollouts() == 0);
    }

    #[test]
    fn dump_round_trip() {
        let b = batch(4);
        let mut back = RolloutBatch::<f64>::from_dump_bytes(&b.to_dump_bytes()).unwrap();
        back.finished = b.finished.clone();
        assert_eq!(back, b);
        assert!(RolloutBatch::<f32>::from_dump_bytes(&b.to_dump_bytes()).is_err());
        let bytes = b.to_dump_bytes();
        assert!(RolloutBatch::<f64>::from_dump_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
