use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Action, ActionSpace};

use super::{Environment, Step};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    pub agents: usize,
    pub arms: usize,
    /// Reward of each arm, indexed by arm.
    pub arm_rewards: Vec<f64>,
    pub bonus_amount: f64,
    pub bonus_prob: f64,
    /// Arm pulled by each agent in the bonus configuration.
    pub bonus_config: Vec<usize>,
}

impl Default for BanditConfig {
    /// Four agents, ten arms paying `1..=10`, bonus 166 with probability 0.01.
    fn default() -> Self {
        Self::standard(4, 10, 166.0, 0.01)
    }
}

impl BanditConfig {
    /// Arm `i` pays `i + 1`; agent `j` of the bonus configuration pulls arm `K - d + j`.
    pub fn standard(agents: usize, arms: usize, bonus_amount: f64, bonus_prob: f64) -> Self {
        Self {
            agents,
            arms,
            arm_rewards: (1..=arms).map(|r| r as f64).collect(),
            bonus_amount,
            bonus_prob,
            bonus_config: (arms.saturating_sub(agents)..arms).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.agents == 0 || self.arms < 2 || self.agents > self.arms {
            return bad(format!("need 1 <= agents <= arms and arms >= 2, got {} agents, {} arms", self.agents, self.arms));
        }
        if self.arm_rewards.len() != self.arms {
            return bad(format!("{} arm rewards listed for {} arms", self.arm_rewards.len(), self.arms));
        }
        if !(0.0..=1.0).contains(&self.bonus_prob) {
            return bad(format!("bonus_prob {} outside [0, 1]", self.bonus_prob));
        }
        if self.bonus_config.len() != self.agents || self.bonus_config.iter().any(|&a| a >= self.arms) {
            return bad(format!("bonus_config {:?} must assign each of {} agents an arm below {}", self.bonus_config, self.agents, self.arms));
        }
        let mut pulled = self.bonus_config.clone();
        pulled.sort_unstable();
        pulled.dedup();
        let total: f64 = pulled.iter().map(|&a| self.arm_rewards[a]).sum();
        if pulled.len() != self.agents || (total - self.max_reward()).abs() > 1e-9 {
            return bad(format!("bonus_config {:?} is not an optimal assignment", self.bonus_config));
        }
        Ok(())
    }

    /// Sum of the `d` largest arm rewards: the best reward without bonus.
    pub fn max_reward(&self) -> f64 {
        let mut r = self.arm_rewards.clone();
        r.sort_by(|a, b| b.total_cmp(a));
        r.iter().take(self.agents).sum()
    }

    /// Reward for a set of pulled arms, duplicates counted once.
    pub fn base_reward(&self, action: &Action) -> f64 {
        let mut pulled = action.components().to_vec();
        pulled.sort_unstable();
        pulled.dedup();
        pulled.iter().map(|&a| self.arm_rewards[a]).sum()
    }
}

/// One-step multi-agent bandit: each agent pulls one arm, every distinct
/// pulled arm pays once, and one particular agent-to-arm assignment earns a
/// random bonus.
#[derive(Debug, Clone)]
pub struct MultiAgentBandit {
    config: BanditConfig,
    done: bool,
}

impl MultiAgentBandit {
    pub const STATE: [f64; 1] = [1.0];

    pub fn new(config: BanditConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, done: true })
    }

    pub fn config(&self) -> &BanditConfig {
        &self.config
    }
}

impl Environment for MultiAgentBandit {
    fn action_space(&self) -> ActionSpace {
        ActionSpace::new(self.config.agents, self.config.arms).expect("validated config")
    }

    fn state_dim(&self) -> usize {
        Self::STATE.len()
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.done = false;
        Self::STATE.to_vec()
    }

    fn step(&mut self, action: &Action, rng: &mut dyn RngCore) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        self.action_space().validate(action)?;
        let mut reward = self.config.base_reward(action);
        if action.components() == self.config.bonus_config.as_slice() && rng.gen::<f64>() < self.config.bonus_prob {
            reward += self.config.bonus_amount;
        }
        self.done = true;
        Ok(Step { state: Self::STATE.to_vec(), reward, done: true })
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn is_optimal_config(&self, action: &Action) -> Option<bool> {
        Some(action.components() == self.config.bonus_config.as_slice())
    }
}
