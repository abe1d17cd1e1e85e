use ppg_core::env::{EnvName, GOOD_ARM};
use ppg_core::nn::{Matrix, NnConfig};
use ppg_core::phasic::{loss_clip_grad, Hyperparameters, PhasicError, Trainer, Variant};

fn small(name: EnvName, variant: Variant) -> Hyperparameters {
    let mut hp = Hyperparameters::default();
    hp.env.name = name;
    hp.env.num_envs = 4;
    hp.rollout.horizon = 32;
    hp.rollout.minibatches = 4;
    hp.phasic.variant = variant;
    hp.phasic.n_pi = 2;
    hp.phasic.e_aux = 2;
    hp.nn = NnConfig {
        hidden: vec![16, 16],
        ..Default::default()
    };
    hp
}

fn bandit_logits(t: &Trainer<f64>) -> Vec<f64> {
    t.policy().logits(&Matrix::from_vec(1, 1, vec![1.0])).unwrap().into_vec()
}

#[test]
fn good_arm_logit_rises_after_one_policy_epoch() {
    let mut hp = small(EnvName::Bandit, Variant::PpgDual);
    hp.env.bandit_p_good = 1.0;
    hp.env.bandit_p_bad = 0.0;
    hp.advantage.normalize_rewards = false;
    hp.phasic.entropy_coef = 0.0;
    hp.phasic.e_v = Some(0);
    let mut t = Trainer::<f64>::new(hp, 3).unwrap();
    let before = bandit_logits(&t);
    t.policy_iteration().unwrap();
    let after = bandit_logits(&t);
    let gap = |l: &[f64]| l[GOOD_ARM] - l[1 - GOOD_ARM];
    assert!(gap(&after) > gap(&before), "{before:?} -> {after:?}");
}

#[test]
fn one_phase_pair_for_exact_budget() {
    let mut hp = small(EnvName::Chain, Variant::PpgDual);
    hp.phasic.total_timesteps = (hp.phasic.n_pi * hp.batch_size()) as u64;
    let mut t = Trainer::<f64>::new(hp.clone(), 0).unwrap();
    let s = t.train(|_| Ok(())).unwrap();
    assert_eq!(s.rows.len(), hp.phasic.n_pi);
    assert_eq!(s.aux_reports.len(), 1);
    assert_eq!(t.phase(), 1);
    let r = &s.aux_reports[0];
    assert_eq!(r.minibatch_updates, hp.phasic.e_aux * hp.rollout.aux_minibatches_per_n_pi * hp.phasic.n_pi);
    assert!(s.rows.last().unwrap().aux_loss.is_finite());
    assert!(s.rows[0].aux_loss.is_nan());
}

#[test]
fn default_aux_phase_update_count() {
    let mut hp = small(EnvName::Chain, Variant::PpgDual);
    hp.phasic.n_pi = 32;
    hp.phasic.e_aux = 6;
    hp.env.num_envs = 2;
    hp.rollout.horizon = 8;
    hp.rollout.minibatches = 2;
    let mut t = Trainer::<f64>::new(hp, 0).unwrap();
    let rows = t.policy_phase().unwrap();
    assert_eq!(rows.len(), 32);
    assert_eq!(t.buffer().rollouts(), 32);
    t.freeze().unwrap();
    assert_eq!(t.auxiliary_phase().unwrap().minibatch_updates, 6 * 16 * 32);
}

#[test]
fn trailing_partial_phase_skips_aux() {
    let mut hp = small(EnvName::Chain, Variant::PpgDual);
    hp.phasic.n_pi = 3;
    hp.phasic.total_timesteps = (4 * hp.batch_size()) as u64;
    let mut t = Trainer::<f64>::new(hp, 0).unwrap();
    let s = t.train(|_| Ok(())).unwrap();
    assert_eq!(s.rows.len(), 4);
    assert_eq!(s.aux_reports.len(), 1);
}

#[test]
fn aux_phase_requires_freeze() {
    let mut t = Trainer::<f64>::new(small(EnvName::Chain, Variant::PpgDual), 0).unwrap();
    t.policy_iteration().unwrap();
    assert!(matches!(t.auxiliary_phase(), Err(PhasicError::Protocol(_))));
    let mut p = Trainer::<f64>::new(small(EnvName::Chain, Variant::PpoShared), 0).unwrap();
    assert!(matches!(p.auxiliary_phase(), Err(PhasicError::Protocol(_))));
}

#[test]
fn zero_aux_epochs_is_identity() {
    let mut hp = small(EnvName::Chain, Variant::PpgDual);
    hp.phasic.e_aux = 0;
    let mut t = Trainer::<f64>::new(hp, 0).unwrap();
    t.policy_phase().unwrap();
    let p = t.policy().params().flat_values();
    let v = t.value_net().unwrap().params().flat_values();
    t.freeze().unwrap();
    let r = t.auxiliary_phase().unwrap();
    assert_eq!(r.minibatch_updates, 0);
    assert_eq!(t.policy().params().flat_values(), p);
    assert_eq!(t.value_net().unwrap().params().flat_values(), v);
}

#[test]
fn clone_weight_anchors_policy() {
    let kl_after = |beta: f64| {
        let mut hp = small(EnvName::KeyDoor, Variant::PpgDual);
        hp.phasic.beta_clone = beta;
        hp.phasic.e_aux = 3;
        let mut t = Trainer::<f64>::new(hp, 11).unwrap();
        t.policy_phase().unwrap();
        t.freeze().unwrap();
        t.auxiliary_phase().unwrap().final_clone_kl
    };
    let (loose, tight) = (kl_after(1.0), kl_after(1e3));
    assert!(tight < loose, "beta 1e3: {tight}, beta 1: {loose}");
}

#[test]
fn clipped_samples_have_zero_gradient() {
    let mut hp = small(EnvName::KeyDoor, Variant::PpgDual);
    hp.phasic.e_pi = 4;
    hp.nn.learning_rate = 5e-3;
    let mut t = Trainer::<f64>::new(hp.clone(), 5).unwrap();
    t.policy_iteration().unwrap();
    t.policy_iteration().unwrap();
    let spec = t.env_spec().clone();
    let obs = Matrix::from_vec(64, spec.obs_dim, (0..64 * spec.obs_dim).map(|i| ((i * 7919) % 5 == 0) as u8 as f64).collect());
    let logits = t.policy().logits(&obs).unwrap();
    let dist = ppg_core::nn::CategoricalDist::new(logits);
    let actions: Vec<usize> = (0..64).map(|i| i % spec.num_actions).collect();
    let logp_new = dist.log_prob(&actions).unwrap();
    let logp_old: Vec<f64> = logp_new.iter().enumerate().map(|(i, l)| l + ((i % 9) as f64 - 4.0) * 0.15).collect();
    let adv: Vec<f64> = (0..64).map(|i| if i % 3 == 0 { -1.0 } else { 0.7 }).collect();
    let eps = hp.phasic.clip_eps;
    let out = loss_clip_grad(&logp_new, &logp_old, &adv, eps).unwrap();
    let mut clipped = 0;
    for i in 0..64 {
        let r = (logp_new[i] - logp_old[i]).exp();
        if (r > 1.0 + eps && adv[i] > 0.0) || (r < 1.0 - eps && adv[i] < 0.0) {
            assert_eq!(out.dlogp[i], 0.0, "sample {i}");
            clipped += 1;
        } else {
            assert_ne!(out.dlogp[i], 0.0, "sample {i}");
        }
    }
    assert!(clipped > 5);
}

#[test]
fn checkpoint_round_trip_restores_weights() {
    let hp = small(EnvName::Chain, Variant::PpgSingleNet);
    let mut t = Trainer::<f64>::new(hp.clone(), 2).unwrap();
    t.phase_step().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    t.checkpoint().save(&path).unwrap();
    let mut u = Trainer::<f64>::new(hp, 99).unwrap();
    u.load_checkpoint(&path).unwrap();
    assert_eq!(u.policy().params().flat_values(), t.policy().params().flat_values());
    assert_eq!(u.env_steps(), t.env_steps());
    assert_eq!(u.phase(), 1);
}

#[test]
fn divergence_is_checkpointed() {
    let mut hp = small(EnvName::Chain, Variant::PpgDual);
    hp.nn.learning_rate = 1e300;
    let mut t = Trainer::<f64>::new(hp, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.set_checkpointing(dir.path(), 0);
    match t.train(|_| Ok(())) {
        Err(PhasicError::Diverged { checkpoint, .. }) => assert!(checkpoint.unwrap().exists()),
        other => panic!("expected divergence, got {:?}", other.map(|s| s.rows.len())),
    }
}

#[test]
fn every_variant_trains_in_f32_and_f64() {
    for v in Variant::ALL {
        let hp = small(EnvName::KeyDoor, v);
        let a = Trainer::<f32>::new(hp.clone(), 1).unwrap().phase_step().unwrap();
        let b = Trainer::<f64>::new(hp, 1).unwrap().phase_step().unwrap();
        assert_eq!(a.0.len(), 2, "{v}");
        assert_eq!(a.1.is_some(), v.is_ppg(), "{v}");
        assert!(b.0.iter().all(|r| r.policy_loss.is_finite() && r.value_loss.is_finite()), "{v}");
    }
}

#[test]
fn periodic_checkpoints_are_written() {
    let mut hp = small(EnvName::Chain, Variant::PpgDual);
    hp.phasic.total_timesteps = (3 * hp.phasic.n_pi * hp.batch_size()) as u64;
    let mut t = Trainer::<f64>::new(hp, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.set_checkpointing(dir.path(), 2);
    t.train(|_| Ok(())).unwrap();
    assert!(dir.path().join("phase-0002.ckpt").exists());
    assert!(!dir.path().join("phase-0001.ckpt").exists());
}
