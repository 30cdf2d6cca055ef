use rand::seq::index::sample;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Action, ActionSpace};

use super::{Environment, Step};

/// Moves per hunter: offsets in `{-1, 0, 1}^2`, row-major, index 4 = stay.
pub const MOVES: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HuntersConfig {
    pub grid_size: usize,
    pub hunters: usize,
    pub rabbits: usize,
    pub max_steps: usize,
}

impl Default for HuntersConfig {
    fn default() -> Self {
        Self { grid_size: 5, hunters: 2, rabbits: 2, max_steps: 10_000 }
    }
}

impl HuntersConfig {
    pub fn validate(&self) -> Result<()> {
        let cells = self.grid_size * self.grid_size;
        if self.grid_size < 2 {
            return Err(Error::Config(format!("grid_size must be at least 2, got {}", self.grid_size)));
        }
        if self.hunters == 0 || self.rabbits == 0 {
            return Err(Error::Config("hunters and rabbits must both be positive".into()));
        }
        if self.hunters > cells || self.rabbits > cells {
            return Err(Error::Config(format!("{cells} cells cannot hold {} hunters / {} rabbits", self.hunters, self.rabbits)));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Full board state. Captured entities keep their last position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuntersRabbitsState {
    pub grid_size: usize,
    pub hunters: Vec<(usize, usize)>,
    pub rabbits: Vec<(usize, usize)>,
    pub hunter_active: Vec<bool>,
    pub rabbit_active: Vec<bool>,
    pub steps: usize,
}

impl HuntersRabbitsState {
    /// `(active, row / (n - 1), col / (n - 1))` for each hunter, then each rabbit.
    pub fn encode(&self) -> Vec<f64> {
        let scale = (self.grid_size - 1) as f64;
        let hunters = self.hunters.iter().zip(&self.hunter_active);
        let rabbits = self.rabbits.iter().zip(&self.rabbit_active);
        hunters
            .chain(rabbits)
            .flat_map(|(&(r, c), &active)| [if active { 1.0 } else { 0.0 }, r as f64 / scale, c as f64 / scale])
            .collect()
    }

    pub fn captures(&self) -> usize {
        self.rabbit_active.iter().filter(|a| !**a).count()
    }

    /// Captures every active rabbit sharing a cell with an active hunter;
    /// lower-index hunters capture first, one rabbit per hunter.
    fn resolve_captures(&mut self) -> usize {
        let mut captured = 0;
        for h in 0..self.hunters.len() {
            if !self.hunter_active[h] {
                continue;
            }
            let pos = self.hunters[h];
            if let Some(r) = (0..self.rabbits.len()).find(|&r| self.rabbit_active[r] && self.rabbits[r] == pos) {
                self.rabbit_active[r] = false;
                self.hunter_active[h] = false;
                captured += 1;
            }
        }
        captured
    }
}

/// `n x n` grid with static rabbits; each hunter moves to one of its nine
/// neighbouring cells (or stays). Landing on a rabbit captures it for a
/// reward of 1 and retires both. Off-grid moves are clamped per axis.
#[derive(Debug, Clone)]
pub struct HuntersRabbits {
    config: HuntersConfig,
    state: HuntersRabbitsState,
    reset_reward: f64,
    done: bool,
}

impl HuntersRabbits {
    pub fn new(config: HuntersConfig) -> Result<Self> {
        config.validate()?;
        let state = HuntersRabbitsState {
            grid_size: config.grid_size,
            hunters: vec![(0, 0); config.hunters],
            rabbits: vec![(0, 0); config.rabbits],
            hunter_active: vec![false; config.hunters],
            rabbit_active: vec![false; config.rabbits],
            steps: 0,
        };
        Ok(Self { config, state, reset_reward: 0.0, done: true })
    }

    /// Starts an episode from an explicit board; captures at placement are resolved.
    pub fn with_state(config: HuntersConfig, state: HuntersRabbitsState) -> Result<Self> {
        config.validate()?;
        if state.hunters.len() != config.hunters || state.rabbits.len() != config.rabbits {
            return Err(Error::Config("board does not match hunter/rabbit counts".into()));
        }
        let mut env = Self { config, state, reset_reward: 0.0, done: false };
        env.reset_reward = env.state.resolve_captures() as f64;
        env.refresh_done();
        Ok(env)
    }

    pub fn config(&self) -> &HuntersConfig {
        &self.config
    }

    pub fn state(&self) -> &HuntersRabbitsState {
        &self.state
    }

    fn refresh_done(&mut self) {
        let s = &self.state;
        self.done = s.rabbit_active.iter().all(|a| !a)
            || s.hunter_active.iter().all(|a| !a)
            || s.steps >= self.config.max_steps;
    }

    fn offset(index: usize) -> (isize, isize) {
        ((index / 3) as isize - 1, (index % 3) as isize - 1)
    }
}

impl Environment for HuntersRabbits {
    fn action_space(&self) -> ActionSpace {
        ActionSpace::new(self.config.hunters, MOVES).expect("validated config")
    }

    fn state_dim(&self) -> usize {
        3 * (self.config.hunters + self.config.rabbits)
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let n = self.config.grid_size;
        let cells = n * n;
        let to_pos = |i: usize| (i / n, i % n);
        let hunters = sample(rng, cells, self.config.hunters).into_iter().map(to_pos).collect();
        let rabbits = sample(rng, cells, self.config.rabbits).into_iter().map(to_pos).collect();
        self.state = HuntersRabbitsState {
            grid_size: n,
            hunters,
            rabbits,
            hunter_active: vec![true; self.config.hunters],
            rabbit_active: vec![true; self.config.rabbits],
            steps: 0,
        };
        self.reset_reward = self.state.resolve_captures() as f64;
        self.refresh_done();
        self.state.encode()
    }

    fn step(&mut self, action: &Action, _rng: &mut dyn RngCore) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        self.action_space().validate(action)?;
        let last = (self.config.grid_size - 1) as isize;
        for (h, &a) in action.components().iter().enumerate() {
            if !self.state.hunter_active[h] {
                continue;
            }
            let (dr, dc) = Self::offset(a);
            let (r, c) = self.state.hunters[h];
            let r = (r as isize + dr).clamp(0, last) as usize;
            let c = (c as isize + dc).clamp(0, last) as usize;
            self.state.hunters[h] = (r, c);
        }
        let reward = self.state.resolve_captures() as f64;
        self.state.steps += 1;
        self.refresh_done();
        Ok(Step { state: self.state.encode(), reward, done: self.done })
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn reset_reward(&self) -> f64 {
        self.reset_reward
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const STAY: usize = 4;

    fn board(hunters: &[(usize, usize)], rabbits: &[(usize, usize)]) -> (HuntersConfig, HuntersRabbitsState) {
        let cfg = HuntersConfig { grid_size: 5, hunters: hunters.len(), rabbits: rabbits.len(), max_steps: 10_000 };
        let state = HuntersRabbitsState {
            grid_size: 5,
            hunters: hunters.to_vec(),
            rabbits: rabbits.to_vec(),
            hunter_active: vec![true; hunters.len()],
            rabbit_active: vec![true; rabbits.len()],
            steps: 0,
        };
        (cfg, state)
    }

    #[test]
    fn move_toward_adjacent_rabbit_captures() {
        let (cfg, state) = board(&[(2, 2)], &[(1, 3)]);
        let mut env = HuntersRabbits::with_state(cfg, state).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // up-right is offset (-1, +1): index 0 * 3 + 2
        let step = env.step(&Action::new(vec![2]), &mut rng).unwrap();
        assert_eq!(step.reward, 1.0);
        assert!(step.done);
        assert!(!env.state().hunter_active[0]);
        assert!(!env.state().rabbit_active[0]);
        assert!(matches!(env.step(&Action::new(vec![STAY]), &mut rng), Err(Error::EpisodeDone)));
    }

    #[test]
    fn staying_changes_nothing() {
        let (cfg, state) = board(&[(0, 0), (4, 4)], &[(2, 2), (0, 4)]);
        let mut env = HuntersRabbits::with_state(cfg, state.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let step = env.step(&Action::new(vec![STAY, STAY]), &mut rng).unwrap();
        assert_eq!(step.reward, 0.0);
        assert_eq!(env.state().hunters, state.hunters);
        assert_eq!(env.state().steps, 1);
    }

    #[test]
    fn two_hunters_one_rabbit_single_capture() {
        let (cfg, state) = board(&[(1, 1), (3, 3)], &[(2, 2), (0, 4)]);
        let mut env = HuntersRabbits::with_state(cfg, state).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // hunter 0 moves down-right (index 8), hunter 1 up-left (index 0)
        let step = env.step(&Action::new(vec![8, 0]), &mut rng).unwrap();
        assert_eq!(step.reward, 1.0);
        assert_eq!(env.state().hunter_active, vec![false, true]);
        assert_eq!(env.state().hunters[1], (2, 2));
        assert!(!step.done);
    }

    #[test]
    fn moves_clamp_at_walls() {
        let (cfg, state) = board(&[(0, 0)], &[(4, 4)]);
        let mut env = HuntersRabbits::with_state(cfg, state).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        env.step(&Action::new(vec![0]), &mut rng).unwrap();
        assert_eq!(env.state().hunters[0], (0, 0));
        env.step(&Action::new(vec![1]), &mut rng).unwrap();
        assert_eq!(env.state().hunters[0], (0, 0));
        env.step(&Action::new(vec![7]), &mut rng).unwrap();
        assert_eq!(env.state().hunters[0], (1, 0));
    }

    #[test]
    fn placement_on_rabbit_captures_at_reset() {
        let (cfg, state) = board(&[(1, 1), (0, 0)], &[(1, 1), (4, 4)]);
        let env = HuntersRabbits::with_state(cfg, state).unwrap();
        assert_eq!(env.reset_reward(), 1.0);
        assert!(!env.is_done());
    }

    #[test]
    fn encoding_layout() {
        let (cfg, state) = board(&[(0, 0), (4, 2)], &[(2, 2), (0, 4)]);
        let env = HuntersRabbits::with_state(cfg, state).unwrap();
        let enc = env.state().encode();
        assert_eq!(enc.len(), 12);
        assert_eq!(&enc[..3], &[1.0, 0.0, 0.0]);
        assert_eq!(&enc[3..6], &[1.0, 1.0, 0.5]);
        assert_eq!(env.state_dim(), 12);
    }

    #[test]
    fn invalid_components_rejected() {
        let (cfg, state) = board(&[(0, 0)], &[(4, 4)]);
        let mut env = HuntersRabbits::with_state(cfg, state).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(env.step(&Action::new(vec![9]), &mut rng).is_err());
        assert!(env.step(&Action::new(vec![4, 4]), &mut rng).is_err());
    }

    #[test]
    fn step_limit_ends_episode() {
        let (mut cfg, state) = board(&[(0, 0)], &[(4, 4)]);
        cfg.max_steps = 3;
        let mut env = HuntersRabbits::with_state(cfg, state).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in 0..3 {
            let s = env.step(&Action::new(vec![STAY]), &mut rng).unwrap();
            assert_eq!(s.done, t == 2);
        }
    }

    #[test]
    fn zero_hunters_rejected() {
        let cfg = HuntersConfig { hunters: 0, ..Default::default() };
        assert!(HuntersRabbits::new(cfg).is_err());
    }
}
