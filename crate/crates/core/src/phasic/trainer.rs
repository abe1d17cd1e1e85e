use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::advantage::{standardize, AdvantageNorm, RewardNormalizer};
use crate::env::{EnvError, EnvSpec, VecEnv};
use crate::nn::{
    restore_values, AdamState, CategoricalDist, Checkpoint, CheckpointGroup, HeadGrads, Matrix,
    NnError, ParameterSet, PolicyNet, ValueNet,
};
use crate::phasic::config::{ConfigError, Hyperparameters, Variant};
use crate::phasic::losses::{loss_joint_grad, loss_value_grad, policy_loss, LossError, Surrogate};
use crate::phasic::metrics::MetricsRow;
use crate::real::Real;
use crate::rollout::{collect, minibatches, ReplayBuffer, RolloutBatch, RolloutError};

#[derive(Debug, Error)]
pub enum PhasicError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("{what} loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { what: &'static str, iteration: u64 },
    #[error("{0}")]
    Protocol(&'static str),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("training diverged ({source}); state saved to {}", .checkpoint.as_ref().map_or("<nowhere>".into(), |p| p.display().to_string()))]
    Diverged {
        source: Box<PhasicError>,
        checkpoint: Option<PathBuf>,
    },
}

impl PhasicError {
    fn is_divergence(&self) -> bool {
        matches!(
            self,
            PhasicError::NonFiniteLoss { .. }
                | PhasicError::Loss(LossError::NonFiniteRatio { .. })
                | PhasicError::Nn(NnError::NonFiniteGradient { .. } | NnError::NonFiniteParameters)
        )
    }
}

/// Networks with one Adam state per network and phase.
#[derive(Clone, Debug)]
pub enum Nets<T> {
    Dual {
        policy: PolicyNet<T>,
        policy_opt: AdamState<T>,
        policy_aux_opt: AdamState<T>,
        value: ValueNet<T>,
        value_opt: AdamState<T>,
        value_aux_opt: AdamState<T>,
    },
    Shared {
        net: PolicyNet<T>,
        opt: AdamState<T>,
        aux_opt: AdamState<T>,
    },
}

/// Largest absolute torso gradient produced by the value loss alone, per
/// minibatch, for the shared-network variant.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientProbe {
    pub policy_phase: Vec<f64>,
    pub aux_phase: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuxReport {
    /// Mean KL(frozen || current) on the first minibatch, before its update.
    pub first_clone_kl: f64,
    /// Mean KL(frozen || current) over the whole buffer after the phase.
    pub final_clone_kl: f64,
    pub aux_loss: f64,
    pub aux_value_loss: f64,
    pub value_loss: f64,
    pub targets_checksum_before: u64,
    pub targets_checksum_after: u64,
    pub minibatch_updates: usize,
    pub buffer_len: usize,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub rows: Vec<MetricsRow>,
    pub aux_reports: Vec<AuxReport>,
}

struct Minibatch<T> {
    obs: Matrix<T>,
    actions: Vec<usize>,
    logp_old: Vec<T>,
    old: CategoricalDist<T>,
    adv: Vec<T>,
    targets: Vec<T>,
}

impl<T: Real> Minibatch<T> {
    fn gather(batch: &RolloutBatch<T>, adv: &[f64], idx: &[usize], normalize: bool) -> Self {
        let mut a: Vec<f64> = idx.iter().map(|&i| adv[i]).collect();
        if normalize {
            standardize(&mut a);
        }
        Self {
            obs: batch.obs.gather_rows(idx),
            actions: idx.iter().map(|&i| batch.actions[i]).collect(),
            logp_old: idx.iter().map(|&i| batch.logp_old[i]).collect(),
            old: CategoricalDist::new(batch.logits_old.gather_rows(idx)),
            adv: a.into_iter().map(T::c).collect(),
            targets: idx.iter().map(|&i| T::c(batch.targets[i])).collect(),
        }
    }
}

#[derive(Default)]
struct Avg(f64, usize);

impl Avg {
    fn push<T: Real>(&mut self, x: T) {
        self.0 += x.f64();
        self.1 += 1;
    }

    fn get(&self) -> f64 {
        if self.1 == 0 {
            f64::NAN
        } else {
            self.0 / self.1 as f64
        }
    }
}

#[derive(Default)]
struct IterStats {
    policy_loss: Avg,
    entropy: Avg,
    approx_kl: Avg,
    clip_frac: Avg,
    value_loss: Avg,
}

fn act<T: Real>(nets: &Nets<T>, obs: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>), NnError> {
    match nets {
        Nets::Dual { policy, value, .. } => Ok((policy.logits(obs)?, value.forward(obs)?.value)),
        Nets::Shared { net, .. } => {
            let f = net.forward(obs, false)?;
            Ok((f.logits, f.value.ok_or(NnError::MissingValueHead)?))
        }
    }
}

fn apply<T: Real>(
    params: &mut ParameterSet<T>,
    opt: &mut AdamState<T>,
    lr: f64,
    max_grad_norm: Option<f64>,
) -> Result<(), NnError> {
    params.check_finite_grads()?;
    if let Some(c) = max_grad_norm {
        params.clip_grad_norm(T::c(c));
    }
    opt.step(params, T::c(lr))
}

fn max_abs_torso_grad<T: Real>(net: &PolicyNet<T>) -> f64 {
    net.torso_tensors()
        .into_iter()
        .flat_map(|id| net.params().tensor(id).grad.iter().map(|g| g.f64().abs()))
        .fold(0.0, f64::max)
}

fn explained_variance(pred: &[f64], target: &[f64]) -> f64 {
    let var = |xs: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = xs.collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    let vt = var(&mut target.iter().copied());
    if vt == 0.0 || target.is_empty() {
        return f64::NAN;
    }
    1.0 - var(&mut pred.iter().zip(target).map(|(p, t)| t - p)) / vt
}

/// Trains one seed of one variant.
pub struct Trainer<T: Real> {
    hp: Hyperparameters,
    env: VecEnv,
    nets: Nets<T>,
    normalizer: Option<RewardNormalizer>,
    buffer: ReplayBuffer<T>,
    rng: ChaCha8Rng,
    env_steps: u64,
    iteration: u64,
    phase: u64,
    iters_in_phase: usize,
    probe: Option<GradientProbe>,
    checkpoint_dir: Option<PathBuf>,
    checkpoint_every: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(hp: Hyperparameters, seed: u64) -> Result<Self, PhasicError> {
        hp.validate()?;
        let env = VecEnv::new(&hp.env, seed)?;
        let spec = env.spec().clone();
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        init_rng.set_stream(u64::MAX);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX - 1);
        let nets = Self::build_nets(&hp, &spec, &mut init_rng);
        let normalizer = hp.advantage.normalize_rewards.then(|| {
            RewardNormalizer::new(hp.env.num_envs, hp.advantage.gamma, hp.advantage.reward_clip)
        });
        let buffer = ReplayBuffer::new(spec.obs_dim, hp.phasic.n_pi);
        Ok(Self {
            hp,
            env,
            nets,
            normalizer,
            buffer,
            rng,
            env_steps: 0,
            iteration: 0,
            phase: 0,
            iters_in_phase: 0,
            probe: None,
            checkpoint_dir: None,
            checkpoint_every: 0,
        })
    }

    fn build_nets(hp: &Hyperparameters, spec: &EnvSpec, rng: &mut ChaCha8Rng) -> Nets<T> {
        let adam = hp.nn.adam();
        let h = &hp.nn.hidden;
        if hp.phasic.variant.shares_network() {
            let net = PolicyNet::new(spec.obs_dim, spec.num_actions, h, true, rng);
            let opt = AdamState::new(net.params(), adam);
            Nets::Shared {
                aux_opt: opt.clone(),
                opt,
                net,
            }
        } else {
            let policy = PolicyNet::new(spec.obs_dim, spec.num_actions, h, false, rng);
            let value = ValueNet::new(spec.obs_dim, h, rng);
            Nets::Dual {
                policy_opt: AdamState::new(policy.params(), adam),
                policy_aux_opt: AdamState::new(policy.params(), adam),
                value_opt: AdamState::new(value.params(), adam),
                value_aux_opt: AdamState::new(value.params(), adam),
                policy,
                value,
            }
        }
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn env_spec(&self) -> &EnvSpec {
        self.env.spec()
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn phase(&self) -> u64 {
        self.phase
    }

    pub fn nets(&self) -> &Nets<T> {
        &self.nets
    }

    pub fn buffer(&self) -> &ReplayBuffer<T> {
        &self.buffer
    }

    /// The network that acts: the policy net, or the shared net.
    pub fn policy(&self) -> &PolicyNet<T> {
        match &self.nets {
            Nets::Dual { policy, .. } => policy,
            Nets::Shared { net, .. } => net,
        }
    }

    pub fn value_net(&self) -> Option<&ValueNet<T>> {
        match &self.nets {
            Nets::Dual { value, .. } => Some(value),
            Nets::Shared { .. } => None,
        }
    }

    /// Records value-only torso gradients on every shared-network update.
    pub fn enable_gradient_probe(&mut self) {
        self.probe = Some(GradientProbe::default());
    }

    pub fn gradient_probe(&self) -> Option<&GradientProbe> {
        self.probe.as_ref()
    }

    /// Writes `phase-NNNN.ckpt` into `dir` after every `every` phases
    /// (0 disables periodic checkpoints) and `diverged.ckpt` on divergence.
    pub fn set_checkpointing(&mut self, dir: impl Into<PathBuf>, every: u64) {
        self.checkpoint_dir = Some(dir.into());
        self.checkpoint_every = every;
    }

    fn surrogate(&self) -> Surrogate {
        match self.hp.phasic.variant {
            Variant::PpgKlPenalty => Surrogate::KlPenalty {
                beta: self.hp.phasic.beta_pi,
            },
            _ => Surrogate::Clip {
                eps: self.hp.phasic.clip_eps,
            },
        }
    }

    fn finite(&self, x: T, what: &'static str) -> Result<(), PhasicError> {
        if x.is_finite() {
            Ok(())
        } else {
            Err(PhasicError::NonFiniteLoss {
                what,
                iteration: self.iteration,
            })
        }
    }

    /// Collects one rollout and runs the policy-phase updates on it.
    pub fn policy_iteration(&mut self) -> Result<MetricsRow, PhasicError> {
        if self.iters_in_phase == 0 {
            self.buffer.clear();
        }
        let nets = &self.nets;
        let actor = |obs: &Matrix<T>| act(nets, obs);
        let batch = collect(
            &mut self.env,
            &actor,
            self.normalizer.as_mut(),
            self.hp.advantage.gae(),
            self.hp.rollout.horizon,
            &mut self.rng,
        )?;
        let mut adv = batch.advantages.clone();
        if self.hp.advantage.advantage_norm == AdvantageNorm::Batch {
            standardize(&mut adv);
        }
        let mb_norm = self.hp.advantage.advantage_norm == AdvantageNorm::Minibatch;
        let (e_pi, e_v) = self.hp.phasic.epochs();
        let (n, k) = (batch.len(), self.hp.rollout.minibatches);
        let mut st = IterStats::default();
        if matches!(self.nets, Nets::Dual { .. }) {
            for _ in 0..e_pi {
                for idx in minibatches(n, k, &mut self.rng)? {
                    let mb = Minibatch::gather(&batch, &adv, &idx, mb_norm);
                    self.dual_policy_step(&mb, &mut st)?;
                }
            }
            for _ in 0..e_v {
                for idx in minibatches(n, k, &mut self.rng)? {
                    let mb = Minibatch::gather(&batch, &adv, &idx, mb_norm);
                    self.dual_value_step(&mb, &mut st)?;
                }
            }
        } else {
            for e in 0..e_pi.max(e_v) {
                for idx in minibatches(n, k, &mut self.rng)? {
                    let mb = Minibatch::gather(&batch, &adv, &idx, mb_norm);
                    self.shared_step(&mb, e < e_pi, e < e_v, &mut st)?;
                }
            }
        }
        if self.hp.phasic.variant.is_ppg() {
            self.buffer.add(&batch)?;
        }
        self.env_steps += n as u64;
        let mut row = MetricsRow::empty(self.iteration, self.phase, self.env_steps);
        self.iteration += 1;
        self.iters_in_phase += 1;
        row.episodes = batch.finished.len() as u64;
        if !batch.finished.is_empty() {
            let m = batch.finished.len() as f64;
            row.ep_return_mean = batch.finished.iter().map(|e| e.ret).sum::<f64>() / m;
            row.ep_len_mean = batch.finished.iter().map(|e| e.len as f64).sum::<f64>() / m;
        }
        row.policy_loss = st.policy_loss.get();
        row.entropy = st.entropy.get();
        row.approx_kl = st.approx_kl.get();
        row.clip_frac = st.clip_frac.get();
        row.value_loss = st.value_loss.get();
        row.explained_var = explained_variance(&batch.value_preds(), &batch.targets);
        Ok(row)
    }

    fn dual_policy_step(&mut self, mb: &Minibatch<T>, st: &mut IterStats) -> Result<(), PhasicError> {
        let surrogate = self.surrogate();
        let (ent, lr, clip) = (self.hp.phasic.entropy_coef, self.hp.nn.learning_rate, self.hp.nn.max_grad_norm);
        let Nets::Dual { policy, .. } = &self.nets else {
            unreachable!()
        };
        let fwd = policy.forward(&mb.obs, false)?;
        let new = CategoricalDist::new(fwd.logits.clone());
        let pl = policy_loss(&new, &mb.old, &mb.actions, &mb.logp_old, &mb.adv, surrogate, ent)?;
        self.finite(pl.loss, "policy")?;
        let Nets::Dual { policy, policy_opt, .. } = &mut self.nets else {
            unreachable!()
        };
        policy.params_mut().zero_grad();
        let grads = HeadGrads {
            logits: Some(pl.dlogits),
            ..Default::default()
        };
        policy.backward(&fwd, &grads)?;
        apply(policy.params_mut(), policy_opt, lr, clip)?;
        st.policy_loss.push(pl.surrogate_loss);
        st.entropy.push(pl.entropy);
        st.approx_kl.push(pl.approx_kl);
        st.clip_frac.push(pl.clip_frac);
        Ok(())
    }

    fn dual_value_step(&mut self, mb: &Minibatch<T>, st: &mut IterStats) -> Result<(), PhasicError> {
        let (lr, clip) = (self.hp.nn.learning_rate, self.hp.nn.max_grad_norm);
        let Nets::Dual { value, .. } = &self.nets else {
            unreachable!()
        };
        let fwd = value.forward(&mb.obs)?;
        let (loss, dv) = loss_value_grad(&fwd.value, &mb.targets);
        self.finite(loss, "value")?;
        let Nets::Dual { value, value_opt, .. } = &mut self.nets else {
            unreachable!()
        };
        value.params_mut().zero_grad();
        value.backward(&fwd, &dv);
        apply(value.params_mut(), value_opt, lr, clip)?;
        st.value_loss.push(loss);
        Ok(())
    }

    fn shared_step(
        &mut self,
        mb: &Minibatch<T>,
        policy_on: bool,
        value_on: bool,
        st: &mut IterStats,
    ) -> Result<(), PhasicError> {
        let surrogate = self.surrogate();
        let p = &self.hp.phasic;
        let (ent, lr, clip) = (p.entropy_coef, self.hp.nn.learning_rate, self.hp.nn.max_grad_norm);
        let detach = p.variant == Variant::PpgSingleNet;
        let vf = T::c(if p.variant == Variant::PpoShared { p.vf_coef } else { 1.0 });
        let iteration = self.iteration;
        let Nets::Shared { net, opt, .. } = &mut self.nets else {
            unreachable!()
        };
        let fwd = net.forward(&mb.obs, detach)?;
        let mut grads = HeadGrads::default();
        if policy_on {
            let new = CategoricalDist::new(fwd.logits.clone());
            let pl = policy_loss(&new, &mb.old, &mb.actions, &mb.logp_old, &mb.adv, surrogate, ent)?;
            if !pl.loss.is_finite() {
                return Err(PhasicError::NonFiniteLoss { what: "policy", iteration });
            }
            grads.logits = Some(pl.dlogits);
            st.policy_loss.push(pl.surrogate_loss);
            st.entropy.push(pl.entropy);
            st.approx_kl.push(pl.approx_kl);
            st.clip_frac.push(pl.clip_frac);
        }
        if value_on {
            let pred = fwd.value.as_ref().ok_or(NnError::MissingValueHead)?;
            let (loss, mut dv) = loss_value_grad(pred, &mb.targets);
            if !loss.is_finite() {
                return Err(PhasicError::NonFiniteLoss { what: "value", iteration });
            }
            dv.iter_mut().for_each(|g| *g *= vf);
            st.value_loss.push(loss);
            if let Some(probe) = self.probe.as_mut() {
                net.params_mut().zero_grad();
                let only_value = HeadGrads {
                    value: Some(dv.clone()),
                    ..Default::default()
                };
                net.backward(&fwd, &only_value)?;
                probe.policy_phase.push(max_abs_torso_grad(net));
            }
            grads.value = Some(dv);
        }
        if grads.logits.is_none() && grads.value.is_none() {
            return Ok(());
        }
        net.params_mut().zero_grad();
        net.backward(&fwd, &grads)?;
        apply(net.params_mut(), opt, lr, clip)?;
        Ok(())
    }

    /// Runs policy iterations until the phase holds `n_pi` rollouts or the
    /// step budget is spent.
    pub fn policy_phase(&mut self) -> Result<Vec<MetricsRow>, PhasicError> {
        let mut rows = Vec::new();
        while self.iters_in_phase < self.hp.phasic.n_pi && self.env_steps < self.hp.phasic.total_timesteps {
            rows.push(self.policy_iteration()?);
        }
        Ok(rows)
    }

    /// Snapshots the current policy's logits on every buffered state.
    pub fn freeze(&mut self) -> Result<(), PhasicError> {
        let policy = match &self.nets {
            Nets::Dual { policy, .. } => policy,
            Nets::Shared { net, .. } => net,
        };
        self.buffer.freeze(policy)?;
        Ok(())
    }

    /// Mean KL(frozen || current) over the whole buffer.
    pub fn clone_kl(&self) -> Result<f64, PhasicError> {
        let frozen = self
            .buffer
            .frozen_logits()
            .ok_or(PhasicError::Protocol("clone KL requested before freeze"))?;
        let policy = self.policy();
        let mut total = 0.0;
        let chunk = 4096;
        let mut start = 0;
        while start < self.buffer.len() {
            let end = (start + chunk).min(self.buffer.len());
            let cur = CategoricalDist::new(policy.logits(&self.buffer.obs().slice_rows(start, end))?);
            let old = CategoricalDist::new(frozen.slice_rows(start, end));
            total += crate::nn::kl_divergence(&old, &cur).iter().map(|x| x.f64()).sum::<f64>();
            start = end;
        }
        Ok(total / self.buffer.len() as f64)
    }

    /// `e_aux` epochs of the joint loss (policy) and value loss (value net)
    /// over the frozen buffer. Clears the buffer and starts a new phase.
    pub fn auxiliary_phase(&mut self) -> Result<AuxReport, PhasicError> {
        let variant = self.hp.phasic.variant;
        if !variant.is_ppg() {
            return Err(PhasicError::Protocol("this variant has no auxiliary phase"));
        }
        let frozen = self
            .buffer
            .frozen_logits()
            .ok_or(PhasicError::Protocol("auxiliary phase requires a frozen policy"))?
            .clone();
        let checksum_before = self.buffer.targets_checksum();
        let n = self.buffer.len();
        let k = self.hp.rollout.aux_minibatches_per_n_pi * self.buffer.rollouts();
        let beta = T::c(self.hp.phasic.beta_clone);
        let (lr, clip) = (self.hp.nn.learning_rate, self.hp.nn.max_grad_norm);
        let train_value = variant != Variant::PpgNoAuxValue;
        let mut first_clone_kl = None;
        let (mut aux, mut aux_value, mut value_loss) = (Avg::default(), Avg::default(), Avg::default());
        let mut updates = 0;
        for _ in 0..self.hp.phasic.e_aux {
            for idx in minibatches(n, k, &mut self.rng)? {
                let obs = self.buffer.obs().gather_rows(&idx);
                let targ: Vec<T> = idx.iter().map(|&i| self.buffer.targets()[i]).collect();
                let old = CategoricalDist::new(frozen.gather_rows(&idx));
                let iteration = self.iteration;
                let nonfinite = |what| PhasicError::NonFiniteLoss { what, iteration };
                match &mut self.nets {
                    Nets::Dual {
                        policy,
                        policy_aux_opt,
                        value,
                        value_aux_opt,
                        ..
                    } => {
                        let fwd = policy.forward(&obs, false)?;
                        let cur = CategoricalDist::new(fwd.logits.clone());
                        let j = loss_joint_grad(&fwd.aux_value, &targ, &old, &cur, beta);
                        if !j.loss.is_finite() {
                            return Err(nonfinite("joint"));
                        }
                        first_clone_kl.get_or_insert(j.clone_kl.f64());
                        aux.push(j.loss);
                        aux_value.push(j.aux_loss);
                        policy.params_mut().zero_grad();
                        let grads = HeadGrads {
                            logits: Some(j.dlogits),
                            aux_value: Some(j.daux),
                            value: None,
                        };
                        policy.backward(&fwd, &grads)?;
                        apply(policy.params_mut(), policy_aux_opt, lr, clip)?;
                        if train_value {
                            let vf = value.forward(&obs)?;
                            let (loss, dv) = loss_value_grad(&vf.value, &targ);
                            if !loss.is_finite() {
                                return Err(nonfinite("value"));
                            }
                            value_loss.push(loss);
                            value.params_mut().zero_grad();
                            value.backward(&vf, &dv);
                            apply(value.params_mut(), value_aux_opt, lr, clip)?;
                        }
                    }
                    Nets::Shared { net, aux_opt, .. } => {
                        let fwd = net.forward(&obs, false)?;
                        let cur = CategoricalDist::new(fwd.logits.clone());
                        let j = loss_joint_grad(&fwd.aux_value, &targ, &old, &cur, beta);
                        let pred = fwd.value.as_ref().ok_or(NnError::MissingValueHead)?;
                        let (vloss, dv) = loss_value_grad(pred, &targ);
                        if !j.loss.is_finite() || !vloss.is_finite() {
                            return Err(nonfinite("joint"));
                        }
                        first_clone_kl.get_or_insert(j.clone_kl.f64());
                        aux.push(j.loss);
                        aux_value.push(j.aux_loss);
                        value_loss.push(vloss);
                        let dv = train_value.then_some(dv);
                        if let (Some(probe), Some(dv)) = (self.probe.as_mut(), dv.as_ref()) {
                            net.params_mut().zero_grad();
                            let only_value = HeadGrads {
                                value: Some(dv.clone()),
                                ..Default::default()
                            };
                            net.backward(&fwd, &only_value)?;
                            probe.aux_phase.push(max_abs_torso_grad(net));
                        }
                        net.params_mut().zero_grad();
                        let grads = HeadGrads {
                            logits: Some(j.dlogits),
                            aux_value: Some(j.daux),
                            value: dv,
                        };
                        net.backward(&fwd, &grads)?;
                        apply(net.params_mut(), aux_opt, lr, clip)?;
                    }
                }
                updates += 1;
            }
        }
        let final_clone_kl = self.clone_kl()?;
        let report = AuxReport {
            first_clone_kl: first_clone_kl.unwrap_or(f64::NAN),
            final_clone_kl,
            aux_loss: aux.get(),
            aux_value_loss: aux_value.get(),
            value_loss: value_loss.get(),
            targets_checksum_before: checksum_before,
            targets_checksum_after: self.buffer.targets_checksum(),
            minibatch_updates: updates,
            buffer_len: n,
        };
        self.end_phase();
        Ok(report)
    }

    fn end_phase(&mut self) {
        self.buffer.clear();
        self.iters_in_phase = 0;
        self.phase += 1;
    }

    /// One full phase: policy iterations, then (for the phasic variants and a
    /// complete phase) freeze and the auxiliary phase.
    pub fn phase_step(&mut self) -> Result<(Vec<MetricsRow>, Option<AuxReport>), PhasicError> {
        let mut rows = self.policy_phase()?;
        let complete = self.iters_in_phase == self.hp.phasic.n_pi;
        let mut report = None;
        if complete && self.hp.phasic.variant.is_ppg() && self.hp.phasic.e_aux > 0 {
            self.freeze()?;
            let r = self.auxiliary_phase()?;
            if let Some(last) = rows.last_mut() {
                last.aux_loss = r.aux_loss;
                last.aux_value_loss = r.aux_value_loss;
                last.clone_kl = r.final_clone_kl;
            }
            report = Some(r);
        } else if complete {
            self.end_phase();
        }
        Ok((rows, report))
    }

    pub fn is_done(&self) -> bool {
        self.env_steps >= self.hp.phasic.total_timesteps
    }

    /// Trains to the step budget, handing each metrics row to `sink` as soon
    /// as its phase completes. On divergence the current state is
    /// checkpointed (when a directory is set) and training stops.
    pub fn train(
        &mut self,
        mut sink: impl FnMut(&MetricsRow) -> std::io::Result<()>,
    ) -> Result<TrainSummary, PhasicError> {
        let mut summary = TrainSummary {
            rows: Vec::new(),
            aux_reports: Vec::new(),
        };
        while !self.is_done() {
            let (rows, report) = match self.phase_step() {
                Ok(x) => x,
                Err(e) if e.is_divergence() => {
                    let checkpoint = match &self.checkpoint_dir {
                        Some(dir) => {
                            let p = dir.join("diverged.ckpt");
                            std::fs::create_dir_all(dir)?;
                            self.checkpoint().save(&p)?;
                            Some(p)
                        }
                        None => None,
                    };
                    return Err(PhasicError::Diverged {
                        source: Box::new(e),
                        checkpoint,
                    });
                }
                Err(e) => return Err(e),
            };
            for r in &rows {
                sink(r)?;
            }
            summary.rows.extend(rows);
            let phase_done = self.iters_in_phase == 0;
            summary.aux_reports.extend(report);
            if phase_done && self.checkpoint_every > 0 && self.phase.is_multiple_of(self.checkpoint_every) {
                if let Some(dir) = &self.checkpoint_dir {
                    std::fs::create_dir_all(dir)?;
                    self.checkpoint().save(&dir.join(format!("phase-{:04}.ckpt", self.phase)))?;
                }
            }
        }
        Ok(summary)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        let counters = vec![
            ("env_steps".to_string(), self.env_steps),
            ("iteration".to_string(), self.iteration),
            ("phase".to_string(), self.phase),
        ];
        let group = |name: &str, params: &ParameterSet<T>, opt: &AdamState<T>| CheckpointGroup {
            name: name.to_string(),
            params: params.clone(),
            adam: Some(opt.clone()),
        };
        let groups = match &self.nets {
            Nets::Dual {
                policy,
                policy_opt,
                policy_aux_opt,
                value,
                value_opt,
                value_aux_opt,
            } => vec![
                group("policy", policy.params(), policy_opt),
                group("policy.aux", policy.params(), policy_aux_opt),
                group("value", value.params(), value_opt),
                group("value.aux", value.params(), value_aux_opt),
            ],
            Nets::Shared { net, opt, aux_opt } => vec![
                group("shared", net.params(), opt),
                group("shared.aux", net.params(), aux_opt),
            ],
        };
        Checkpoint { counters, groups }
    }

    /// Restores network weights, optimizer state and counters. Environment,
    /// normalizer and sampling state are not part of a checkpoint.
    pub fn restore(&mut self, ckpt: &Checkpoint<T>) -> Result<(), PhasicError> {
        let load = |name: &str, params: &mut ParameterSet<T>, opt: &mut AdamState<T>| {
            let g = ckpt
                .group(name)
                .ok_or_else(|| NnError::Checkpoint(format!("missing group `{name}`")))?;
            restore_values(params, &g.params)?;
            if let Some(a) = &g.adam {
                *opt = a.clone();
            }
            Ok::<_, NnError>(())
        };
        match &mut self.nets {
            Nets::Dual {
                policy,
                policy_opt,
                policy_aux_opt,
                value,
                value_opt,
                value_aux_opt,
            } => {
                load("policy", policy.params_mut(), policy_opt)?;
                load("policy.aux", policy.params_mut(), policy_aux_opt)?;
                load("value", value.params_mut(), value_opt)?;
                load("value.aux", value.params_mut(), value_aux_opt)?;
            }
            Nets::Shared { net, opt, aux_opt } => {
                load("shared", net.params_mut(), opt)?;
                load("shared.aux", net.params_mut(), aux_opt)?;
            }
        }
        self.env_steps = ckpt.counter("env_steps").unwrap_or(0);
        self.iteration = ckpt.counter("iteration").unwrap_or(0);
        self.phase = ckpt.counter("phase").unwrap_or(0);
        self.iters_in_phase = 0;
        self.buffer.clear();
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<(), PhasicError> {
        let ckpt = Checkpoint::load(path)?;
        self.restore(&ckpt)
    }

    /// Action probabilities of the acting policy.
    pub fn action_probs(&self, obs: &Matrix<T>) -> Result<Matrix<T>, PhasicError> {
        Ok(CategoricalDist::new(self.policy().logits(obs)?).probs())
    }
}
