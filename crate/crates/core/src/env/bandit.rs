use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Environment, Transition};

/// Two-armed Bernoulli bandit with one-step episodes. Arm 1 pays with
/// probability `p_good`, arm 0 with `p_bad`. The observation is a constant 1.
#[derive(Clone, Debug)]
pub struct Bandit {
    p_good: f64,
    p_bad: f64,
}

pub const GOOD_ARM: usize = 1;

impl Bandit {
    pub fn new(p_good: f64, p_bad: f64) -> Self {
        Self { p_good, p_bad }
    }
}

impl Environment for Bandit {
    fn reset(&mut self, _level_seed: u64) {}

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> Transition {
        let p = if action == GOOD_ARM { self.p_good } else { self.p_bad };
        let reward = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        Transition {
            reward,
            terminal: true,
        }
    }

    fn observe(&self, out: &mut [f64]) {
        out[0] = 1.0;
    }

    fn max_abs_reward(&self) -> f64 {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn payout_rates() {
        let mut b = Bandit::new(0.8, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (arm, p) in [(1, 0.8), (0, 0.2)] {
            let n = 20_000;
            let hits: f64 = (0..n).map(|_| b.step(arm, &mut rng).reward).sum();
            assert!((hits / n as f64 - p).abs() < 0.02);
        }
    }
}
