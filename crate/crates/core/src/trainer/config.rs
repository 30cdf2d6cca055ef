use crate::entropy::{EstimatorKind, SoftmaxTable, DEFAULT_ENUMERATION_CAP};
use crate::envs::{BanditConfig, Environment, HuntersConfig, HuntersRabbits, MultiAgentBandit};
use crate::error::{Error, Result};
use crate::policy::{ActionSpace, ModelKind};

use super::baseline::BaselineKind;
use super::optim::OptimizerKind;

pub const DEFAULT_DISCOUNT: f64 = 0.8;
pub const DEFAULT_CLIP: f64 = 1.0;
pub const DEFAULT_BASELINE_LR: f64 = 1e-3;
pub const DEFAULT_EVAL_EPISODES: usize = 1000;
/// Evaluation RNG stream seed, fixed so that checkpoints compare fairly.
pub const DEFAULT_EVAL_SEED: u64 = 12345;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Hunters,
    Bandit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    Hunters(HuntersConfig),
    Bandit(BanditConfig),
}

impl EnvConfig {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::Hunters(_) => EnvKind::Hunters,
            EnvConfig::Bandit(_) => EnvKind::Bandit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Hunters(c) => c.validate(),
            EnvConfig::Bandit(c) => c.validate(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment + Send>> {
        Ok(match self {
            EnvConfig::Hunters(c) => Box::new(HuntersRabbits::new(c.clone())?),
            EnvConfig::Bandit(c) => Box::new(MultiAgentBandit::new(c.clone())?),
        })
    }

    pub fn action_space(&self) -> Result<ActionSpace> {
        Ok(self.build()?.action_space())
    }

    pub fn state_dim(&self) -> Result<usize> {
        Ok(self.build()?.state_dim())
    }
}

/// Fully resolved settings of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// Hidden widths (IS / MMDP) or the single LSTM size; empty for tables.
    pub hidden: Vec<usize>,
    pub estimator: EstimatorKind,
    pub entropy_weight: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub baseline: BaselineKind,
    pub baseline_lr: f64,
    pub discount: f64,
    /// Elementwise gradient bound applied before every policy update.
    pub clip: f64,
    pub episodes: usize,
    pub seed: u64,
    pub env: EnvConfig,
    pub enumeration_cap: u64,
    pub eval_episodes: usize,
    pub eval_greedy: bool,
    pub eval_seed: u64,
    /// Fill the `wallclock_ms` column; off by default so curves are reproducible byte for byte.
    pub record_wallclock: bool,
}

impl TrainConfig {
    /// Settings with the published defaults for this model/estimator/environment.
    pub fn new(env: EnvConfig, model: ModelKind, estimator: EstimatorKind) -> Self {
        let kind = env.kind();
        Self {
            model,
            hidden: default_hidden(model, kind, estimator),
            estimator,
            entropy_weight: default_entropy_weight(model, kind, estimator),
            learning_rate: default_learning_rate(model, kind, estimator),
            optimizer: OptimizerKind::RmsProp,
            baseline: default_baseline(kind),
            baseline_lr: DEFAULT_BASELINE_LR,
            discount: DEFAULT_DISCOUNT,
            clip: DEFAULT_CLIP,
            episodes: 0,
            seed: 0,
            env,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            eval_episodes: DEFAULT_EVAL_EPISODES,
            eval_greedy: false,
            eval_seed: DEFAULT_EVAL_SEED,
            record_wallclock: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.env.validate()?;
        if !(self.entropy_weight >= 0.0 && self.entropy_weight.is_finite()) {
            return bad(format!("entropy_weight must be >= 0, got {}", self.entropy_weight));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.baseline_lr > 0.0 && self.baseline_lr.is_finite()) {
            return bad(format!("baseline_lr must be > 0, got {}", self.baseline_lr));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad(format!("discount must lie in (0, 1], got {}", self.discount));
        }
        if !(self.clip > 0.0) {
            return bad(format!("clip must be > 0, got {}", self.clip));
        }
        let space = self.env.action_space()?;
        match self.model {
            ModelKind::Is | ModelKind::Mmdp if self.hidden.is_empty() || self.hidden.contains(&0) => {
                return bad(format!("{} needs at least one positive hidden width, got {:?}", self.model, self.hidden));
            }
            ModelKind::Lstm if self.hidden.len() != 1 || self.hidden[0] == 0 => {
                return bad(format!("lstm needs exactly one positive hidden size, got {:?}", self.hidden));
            }
            ModelKind::Table if space.dims() > SoftmaxTable::<f64>::MAX_DIMS || space.arity() > SoftmaxTable::<f64>::MAX_ARITY => {
                return bad(format!("table model supports at most {} dims of arity {}", SoftmaxTable::<f64>::MAX_DIMS, SoftmaxTable::<f64>::MAX_ARITY));
            }
            _ => {}
        }
        match self.estimator {
            EstimatorKind::Exact if space.total_actions() > self.enumeration_cap as u128 => {
                return bad(format!(
                    "exact entropy needs {} actions, above the enumeration cap {}",
                    space.total_actions(),
                    self.enumeration_cap
                ));
            }
            EstimatorKind::SmoothedMode { beam: 0 } => return bad("smoothed_mode beam width must be positive".into()),
            _ => {}
        }
        Ok(())
    }
}

pub fn default_baseline(env: EnvKind) -> BaselineKind {
    match env {
        EnvKind::Hunters => BaselineKind::Ffn,
        EnvKind::Bandit => BaselineKind::MovingAverage,
    }
}

pub fn default_hidden(model: ModelKind, env: EnvKind, estimator: EstimatorKind) -> Vec<usize> {
    use EstimatorKind as E;
    match model {
        ModelKind::Lstm => vec![if env == EnvKind::Bandit { 32 } else { 128 }],
        ModelKind::Table => Vec::new(),
        ModelKind::Is => {
            let layers = match estimator {
                E::None => 7,
                E::Crude => 5,
                _ => 1,
            };
            vec![128; layers]
        }
        ModelKind::Mmdp => {
            let layers = match estimator {
                E::Smoothed => 5,
                E::Crude => 4,
                _ => 3,
            };
            vec![128; layers]
        }
    }
}

pub fn default_learning_rate(model: ModelKind, env: EnvKind, estimator: EstimatorKind) -> f64 {
    use EstimatorKind as E;
    match (env, model) {
        (EnvKind::Bandit, _) => match estimator {
            E::None => 0.006,
            E::Crude => 0.008,
            E::UnbiasedGradient => 0.005,
            _ => 0.002,
        },
        (EnvKind::Hunters, ModelKind::Mmdp) => 1e-4,
        (EnvKind::Hunters, _) => 1e-3,
    }
}

pub fn default_entropy_weight(model: ModelKind, env: EnvKind, estimator: EstimatorKind) -> f64 {
    use EstimatorKind as E;
    if estimator == E::None {
        return 0.0;
    }
    match env {
        EnvKind::Bandit => match estimator {
            E::Crude => 0.005,
            E::UnbiasedGradient => 0.003,
            _ => 0.001,
        },
        EnvKind::Hunters => match (model, estimator) {
            (ModelKind::Is, E::Crude) => 0.01,
            (ModelKind::Is, E::UnbiasedGradient) => 0.02,
            (ModelKind::Is, _) => 0.03,
            (ModelKind::Mmdp, E::Crude) => 0.01,
            (ModelKind::Mmdp, E::Smoothed) => 0.02,
            (ModelKind::Mmdp, E::Exact) => 0.01,
            (ModelKind::Mmdp, _) => 0.03,
            (_, E::Crude) => 0.04,
            (_, E::SmoothedMode { .. }) => 0.021,
            (_, E::UnbiasedGradient) => 0.031,
            (_, E::Exact) => 0.01,
            _ => 0.02,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandit_lstm_defaults() {
        let c = TrainConfig::new(EnvConfig::Bandit(BanditConfig::default()), ModelKind::Lstm, EstimatorKind::Smoothed);
        assert_eq!(c.hidden, vec![32]);
        assert_eq!(c.learning_rate, 0.002);
        assert_eq!(c.entropy_weight, 0.001);
        assert_eq!(c.baseline, BaselineKind::MovingAverage);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_exact_over_cap() {
        let mut c = TrainConfig::new(EnvConfig::Bandit(BanditConfig::default()), ModelKind::Lstm, EstimatorKind::Exact);
        c.enumeration_cap = 9_999;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_zero_hunters_and_bad_discount() {
        let env = EnvConfig::Hunters(HuntersConfig { hunters: 0, ..HuntersConfig::default() });
        assert!(TrainConfig::new(env, ModelKind::Lstm, EstimatorKind::None).validate().is_err());
        let mut c = TrainConfig::new(EnvConfig::Hunters(HuntersConfig::default()), ModelKind::Lstm, EstimatorKind::None);
        c.discount = 0.0;
        assert!(c.validate().is_err());
    }
}
