use ppg_core::env::{EnvConfig, EnvName, VecEnv};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mean_return(cfg: &EnvConfig, seed: u64, steps: usize) -> f64 {
    let mut env = VecEnv::new(cfg, seed).unwrap();
    let n = env.spec().num_actions;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    let (mut total, mut count) = (0.0, 0usize);
    for _ in 0..steps / cfg.num_envs {
        let actions: Vec<usize> = (0..cfg.num_envs).map(|_| rng.random_range(0..n)).collect();
        for ep in env.step(&actions).unwrap().finished {
            total += ep.ret;
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn random_keydoor_return_stays_in_calibrated_band() {
    let cfg = EnvConfig { num_envs: 16, ..Default::default() };
    for seed in [1000, 1001, 1002] {
        let m = random_mean_return(&cfg, seed, 10_000);
        assert!((0.392..=0.634).contains(&m), "seed {seed}: {m}");
    }
}

#[test]
fn random_bandit_return_is_the_average_payout() {
    let cfg = EnvConfig { name: EnvName::Bandit, num_envs: 8, ..Default::default() };
    let m = random_mean_return(&cfg, 0, 40_000);
    let expected = 0.5 * (cfg.bandit_p_good + cfg.bandit_p_bad);
    assert!((m - expected).abs() < 0.02, "{m} vs {expected}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn observations_and_rewards_stay_bounded(
        name in prop::sample::select(vec![EnvName::KeyDoor, EnvName::Chain, EnvName::Bandit]),
        seed in any::<u64>(),
        num_envs in 1usize..6,
        actions in prop::collection::vec(0usize..64, 200),
    ) {
        let cfg = EnvConfig { name, num_envs, ..Default::default() };
        let mut env = VecEnv::new(&cfg, seed).unwrap();
        let spec = env.spec().clone();
        let bound = env.max_abs_reward();
        for (t, a) in actions.iter().enumerate() {
            let acts: Vec<usize> = (0..num_envs).map(|i| (a + i + t) % spec.num_actions).collect();
            let r = env.step(&acts).unwrap();
            prop_assert_eq!(r.obs.len(), num_envs * spec.obs_dim);
            prop_assert!(r.obs.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!(r.rewards.iter().all(|x| x.abs() <= bound));
            for ep in &r.finished {
                prop_assert!(r.dones[ep.instance]);
                prop_assert!(ep.len >= 1 && ep.len <= spec.max_episode_len);
            }
        }
    }

    #[test]
    fn same_seed_same_trajectory(seed in any::<u64>(), actions in prop::collection::vec(0usize..4, 60)) {
        let cfg = EnvConfig { num_envs: 3, ..Default::default() };
        let (mut a, mut b) = (VecEnv::new(&cfg, seed).unwrap(), VecEnv::new(&cfg, seed).unwrap());
        for x in actions {
            prop_assert_eq!(a.step(&[x; 3]).unwrap(), b.step(&[x; 3]).unwrap());
        }
    }
}
