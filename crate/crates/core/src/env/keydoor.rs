use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Environment, Transition};

pub const KEY_REWARD: f64 = 0.5;
pub const GOAL_REWARD: f64 = 1.0;

const EMPTY: u8 = 0;
const WALL: u8 = 1;
const DOOR: u8 = 2;

const CHANNELS: usize = 5;

/// Square gridworld split in two by a wall with a locked door.
///
/// The agent and key start on one side, the goal on the other. Picking up
/// the key pays `KEY_REWARD` and unlocks the door; reaching the goal pays
/// `GOAL_REWARD` and ends the episode. Each level draws the wall position,
/// door position, the three item positions and one of four orientations.
///
/// Observation: five one-hot planes over the interior cells (wall, agent,
/// key, door, goal) followed by a has-key flag. Actions: up, down, left,
/// right; moves into walls or the locked door leave the agent in place.
#[derive(Clone, Debug)]
pub struct KeyDoor {
    size: usize,
    cells: Vec<u8>,
    agent: (usize, usize),
    key: Option<(usize, usize)>,
    door: (usize, usize),
    goal: (usize, usize),
    has_key: bool,
}

impl KeyDoor {
    pub fn new(size: usize) -> Self {
        assert!(size >= 7, "keydoor needs size >= 7");
        let mut env = Self {
            size,
            cells: vec![EMPTY; size * size],
            agent: (1, 1),
            key: None,
            door: (1, 1),
            goal: (1, 1),
            has_key: false,
        };
        env.reset(0);
        env
    }

    pub fn obs_dim(size: usize) -> usize {
        let m = size - 2;
        CHANNELS * m * m + 1
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn agent(&self) -> (usize, usize) {
        self.agent
    }

    pub fn key(&self) -> Option<(usize, usize)> {
        self.key
    }

    pub fn door(&self) -> (usize, usize) {
        self.door
    }

    pub fn goal(&self) -> (usize, usize) {
        self.goal
    }

    pub fn has_key(&self) -> bool {
        self.has_key
    }

    pub fn is_wall(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.size + c] == WALL
    }

    /// Compact text rendering, one line per row.
    pub fn render(&self) -> String {
        let mut s = String::with_capacity(self.size * (self.size + 1));
        for r in 0..self.size {
            for c in 0..self.size {
                let p = (r, c);
                s.push(if p == self.agent {
                    'A'
                } else if Some(p) == self.key {
                    'k'
                } else if p == self.goal {
                    'G'
                } else {
                    match self.cells[r * self.size + c] {
                        WALL => '#',
                        DOOR => 'D',
                        _ => '.',
                    }
                });
            }
            s.push('\n');
        }
        s
    }

    fn generate(&mut self, level_seed: u64) {
        let n = self.size;
        let mut rng = ChaCha8Rng::seed_from_u64(level_seed);
        // canonical layout: vertical wall at column `split`, start region on
        // the left, then rotate/mirror into one of four orientations
        let split = rng.random_range(3..=n - 4);
        let door_row = rng.random_range(1..=n - 2);
        let left = |rng: &mut ChaCha8Rng| (rng.random_range(1..=n - 2), rng.random_range(1..split));
        let agent = left(&mut rng);
        let key = loop {
            let k = left(&mut rng);
            if k != agent {
                break k;
            }
        };
        let goal = (rng.random_range(1..=n - 2), rng.random_range(split + 1..=n - 2));
        let orient = rng.random_range(0..4u8);
        let map = |(r, c): (usize, usize)| match orient {
            0 => (r, c),
            1 => (r, n - 1 - c),
            2 => (c, r),
            _ => (c, n - 1 - r),
        };

        self.cells.iter_mut().for_each(|x| *x = EMPTY);
        for i in 0..n {
            for (r, c) in [(0, i), (n - 1, i), (i, 0), (i, n - 1)] {
                self.cells[r * n + c] = WALL;
            }
        }
        for r in 1..n - 1 {
            let (rr, cc) = map((r, split));
            self.cells[rr * n + cc] = WALL;
        }
        self.door = map((door_row, split));
        self.cells[self.door.0 * n + self.door.1] = DOOR;
        self.agent = map(agent);
        self.key = Some(map(key));
        self.goal = map(goal);
        self.has_key = false;
    }
}

impl Environment for KeyDoor {
    fn reset(&mut self, level_seed: u64) {
        self.generate(level_seed);
    }

    fn step(&mut self, action: usize, _rng: &mut ChaCha8Rng) -> Transition {
        let (r, c) = self.agent;
        let target = match action {
            0 => (r - 1, c),
            1 => (r + 1, c),
            2 => (r, c - 1),
            _ => (r, c + 1),
        };
        let cell = self.cells[target.0 * self.size + target.1];
        let blocked = cell == WALL || (cell == DOOR && !self.has_key);
        if !blocked {
            self.agent = target;
        }
        let mut reward = 0.0;
        let mut terminal = false;
        if Some(self.agent) == self.key {
            self.key = None;
            self.has_key = true;
            reward += KEY_REWARD;
        }
        if self.agent == self.goal {
            reward += GOAL_REWARD;
            terminal = true;
        }
        Transition { reward, terminal }
    }

    fn observe(&self, out: &mut [f64]) {
        let n = self.size;
        let m = n - 2;
        let plane = m * m;
        out.iter_mut().for_each(|x| *x = 0.0);
        let idx = |(r, c): (usize, usize)| (r - 1) * m + (c - 1);
        for r in 1..n - 1 {
            for c in 1..n - 1 {
                if self.cells[r * n + c] == WALL {
                    out[idx((r, c))] = 1.0;
                }
            }
        }
        out[plane + idx(self.agent)] = 1.0;
        if let Some(k) = self.key {
            out[2 * plane + idx(k)] = 1.0;
        }
        out[3 * plane + idx(self.door)] = 1.0;
        out[4 * plane + idx(self.goal)] = 1.0;
        out[CHANNELS * plane] = if self.has_key { 1.0 } else { 0.0 };
    }

    fn max_abs_reward(&self) -> f64 {
        GOAL_REWARD
    }
}
