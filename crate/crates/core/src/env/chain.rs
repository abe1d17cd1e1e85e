use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Environment, Transition};

/// 1-D chain. Action 0 moves left, action 1 moves right, every other action
/// is a distractor that does nothing. Reaching the right end pays 1 and ends
/// the episode. The level seed picks the start cell in the left half.
///
/// Observation: one-hot position.
#[derive(Clone, Debug)]
pub struct Chain {
    length: usize,
    num_actions: usize,
    pos: usize,
}

impl Chain {
    pub fn new(length: usize, num_actions: usize) -> Self {
        assert!(length >= 2 && num_actions >= 2);
        Self {
            length,
            num_actions,
            pos: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
}

impl Environment for Chain {
    fn reset(&mut self, level_seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(level_seed);
        self.pos = rng.random_range(0..self.length.div_ceil(2).min(self.length - 1));
    }

    fn step(&mut self, action: usize, _rng: &mut ChaCha8Rng) -> Transition {
        match action {
            0 => self.pos = self.pos.saturating_sub(1),
            1 => self.pos += 1,
            _ => {}
        }
        let terminal = self.pos == self.length - 1;
        Transition {
            reward: if terminal { 1.0 } else { 0.0 },
            terminal,
        }
    }

    fn observe(&self, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        out[self.pos] = 1.0;
    }

    fn max_abs_reward(&self) -> f64 {
        1.0
    }
}
