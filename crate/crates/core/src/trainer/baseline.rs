use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamStore, Tape};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::scalar::Scalar;

use super::optim::{Optimizer, OptimizerKind};

pub const VALUE_NET_HIDDEN: usize = 64;
pub const MOVING_AVERAGE_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    None,
    MovingAverage,
    Ffn,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::None => "none",
            BaselineKind::MovingAverage => "moving_average",
            BaselineKind::Ffn => "ffn",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "moving_average" => Ok(Self::MovingAverage),
            "ffn" => Ok(Self::Ffn),
            _ => Err(Error::InvalidArgument(format!("unknown baseline '{s}' (none, moving_average, ffn)"))),
        }
    }
}

/// Mean of the most recent `min(window, seen)` episode rewards; 0 before any.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    window: usize,
    recent: VecDeque<f64>,
}

impl MovingAverage {
    pub fn new(window: usize) -> Self {
        Self { window: window.max(1), recent: VecDeque::new() }
    }

    pub fn value(&self) -> f64 {
        if self.recent.is_empty() {
            0.0
        } else {
            self.recent.iter().sum::<f64>() / self.recent.len() as f64
        }
    }

    pub fn push(&mut self, reward: f64) {
        self.recent.push_back(reward);
        if self.recent.len() > self.window {
            self.recent.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }
}

/// State-value net with one tanh hidden layer, fitted to Monte Carlo returns
/// under an L1 loss.
#[derive(Debug, Clone)]
pub struct ValueNet<S> {
    store: ParamStore<S>,
    net: Mlp,
    optimizer: Optimizer<S>,
    state_dim: usize,
}

impl<S: Scalar> ValueNet<S> {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, lr: f64, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "baseline", state_dim, &[VALUE_NET_HIDDEN], 1, rng);
        Ok(Self { store, net, optimizer: Optimizer::new(OptimizerKind::RmsProp, lr)?, state_dim })
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn predict(&self, state: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let x = self.input(&mut tape, state)?;
        let y = self.net.forward(&mut tape, &self.store, x)?;
        Ok(tape.scalar(y)?.as_f64())
    }

    fn input(&self, tape: &mut Tape<S>, state: &[f64]) -> Result<crate::diffcore::Var> {
        if state.len() != self.state_dim {
            return Err(Error::StateDim { expected: self.state_dim, got: state.len() });
        }
        let s: Vec<S> = state.iter().map(|&v| S::lit(v)).collect();
        tape.vector(&s)
    }

    /// Mean absolute error over `pairs`.
    pub fn l1_loss(&self, pairs: &[(Vec<f64>, f64)]) -> Result<f64> {
        let mut total = 0.0;
        for (s, r) in pairs {
            total += (self.predict(s)? - r).abs();
        }
        Ok(total / pairs.len().max(1) as f64)
    }

    /// One optimizer step on the mean L1 loss; returns the loss before the step.
    pub fn fit(&mut self, pairs: &[(Vec<f64>, f64)]) -> Result<f64> {
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let mut tape = Tape::new();
        let mut terms = Vec::with_capacity(pairs.len());
        let mut loss = 0.0;
        for (s, r) in pairs {
            let x = self.input(&mut tape, s)?;
            let y = self.net.forward(&mut tape, &self.store, x)?;
            let diff = tape.value(y)?[0].as_f64() - r;
            loss += diff.abs();
            // |y - r| has slope sign(y - r) in y
            let sign = if diff > 0.0 { 1.0 } else if diff < 0.0 { -1.0 } else { 0.0 };
            terms.push(tape.scale(y, S::lit(sign))?);
        }
        let total = tape.add_n(&terms)?;
        let mean = tape.scale(total, S::lit(1.0 / pairs.len() as f64))?;
        self.store.zero_grad();
        tape.backward(mean, &mut self.store)?;
        self.optimizer.step(&mut self.store);
        Ok(loss / pairs.len() as f64)
    }
}

/// Keeps the first occurrence of every distinct state, with its return.
pub fn first_visit_pairs(states: &[Vec<f64>], returns: &[f64]) -> Vec<(Vec<f64>, f64)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (s, &r) in states.iter().zip(returns) {
        let key: Vec<u64> = s.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            out.push((s.clone(), r));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub enum Baseline<S> {
    None,
    MovingAverage(MovingAverage),
    Ffn(ValueNet<S>),
}

impl<S: Scalar> Baseline<S> {
    pub fn new<R: Rng + ?Sized>(kind: BaselineKind, state_dim: usize, lr: f64, rng: &mut R) -> Result<Self> {
        Ok(match kind {
            BaselineKind::None => Baseline::None,
            BaselineKind::MovingAverage => Baseline::MovingAverage(MovingAverage::new(MOVING_AVERAGE_WINDOW)),
            BaselineKind::Ffn => Baseline::Ffn(ValueNet::new(state_dim, lr, rng)?),
        })
    }

    /// Baseline value for each visited state.
    pub fn values(&self, states: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            Baseline::None => Ok(vec![0.0; states.len()]),
            Baseline::MovingAverage(m) => Ok(vec![m.value(); states.len()]),
            Baseline::Ffn(net) => states.iter().map(|s| net.predict(s)).collect(),
        }
    }

    /// Learns from a finished episode.
    pub fn update(&mut self, states: &[Vec<f64>], returns: &[f64], episode_reward: f64) -> Result<()> {
        match self {
            Baseline::None => {}
            Baseline::MovingAverage(m) => m.push(episode_reward),
            Baseline::Ffn(net) => {
                net.fit(&first_visit_pairs(states, returns))?;
            }
        }
        Ok(())
    }
}
