//! Episodic environments with multidimensional discrete actions.

mod bandit;
mod hunters;

use rand::RngCore;

use crate::error::Result;
use crate::policy::{Action, ActionSpace};

pub use bandit::{BanditConfig, MultiAgentBandit};
pub use hunters::{HuntersConfig, HuntersRabbits, HuntersRabbitsState};

/// Outcome of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Episodic environment contract. Deterministic given the RNG stream and
/// the action sequence.
pub trait Environment {
    fn action_space(&self) -> ActionSpace;
    fn state_dim(&self) -> usize;

    /// Starts a new episode and returns the initial state.
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;

    /// Rejects actions after the episode has finished.
    fn step(&mut self, action: &Action, rng: &mut dyn RngCore) -> Result<Step>;

    fn is_done(&self) -> bool;

    /// Reward earned by the reset itself, before any action.
    fn reset_reward(&self) -> f64 {
        0.0
    }

    /// `Some(hit)` for environments with a designated optimal configuration.
    fn is_optimal_config(&self, _action: &Action) -> Option<bool> {
        None
    }
}
