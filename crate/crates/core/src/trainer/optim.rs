use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "rmsprop" => Ok(Self::RmsProp),
            "adam" => Ok(Self::Adam),
            _ => Err(Error::InvalidArgument(format!("unknown optimizer '{s}' (sgd, rmsprop, adam)"))),
        }
    }
}

pub const RMSPROP_DECAY: f64 = 0.99;
pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const EPSILON: f64 = 1e-8;

/// First-order optimizer that *descends* along the gradients stored in a
/// [`ParamStore`]. State is allocated lazily on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer<S> {
    kind: OptimizerKind,
    lr: S,
    steps: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self { kind, lr: S::lit(lr), steps: 0, first: Vec::new(), second: Vec::new() })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.as_f64()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update `θ ← θ − Δ(g)` using the accumulated gradients.
    pub fn step(&mut self, store: &mut ParamStore<S>) {
        if self.second.len() != store.len() {
            self.first = store.iter().map(|p| vec![S::zero(); p.value.len()]).collect();
            self.second = self.first.clone();
        }
        self.steps += 1;
        let eps = S::lit(EPSILON);
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in store.iter_mut() {
                    for (v, &g) in p.value.values_mut().iter_mut().zip(&p.grad) {
                        *v = *v - lr * g;
                    }
                }
            }
            OptimizerKind::RmsProp => {
                let rho = S::lit(RMSPROP_DECAY);
                for (p, sq) in store.iter_mut().zip(&mut self.second) {
                    for ((v, &g), s) in p.value.values_mut().iter_mut().zip(&p.grad).zip(sq.iter_mut()) {
                        *s = rho * *s + (S::one() - rho) * g * g;
                        *v = *v - lr * g / (s.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (S::lit(ADAM_BETAS.0), S::lit(ADAM_BETAS.1));
                let t = self.steps as i32;
                let c1 = S::one() - b1.powi(t);
                let c2 = S::one() - b2.powi(t);
                for ((p, m), s) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    for (((v, &g), m), s) in p.value.values_mut().iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(s.iter_mut()) {
                        *m = b1 * *m + (S::one() - b1) * g;
                        *s = b2 * *s + (S::one() - b2) * g * g;
                        *v = *v - lr * (*m / c1) / ((*s / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Clamps every gradient entry to `[-limit, limit]`.
pub fn clip_gradients<S: Scalar>(store: &mut ParamStore<S>, limit: f64) {
    let (lo, hi) = (S::lit(-limit), S::lit(limit));
    for p in store.iter_mut() {
        for g in &mut p.grad {
            *g = g.max(lo).min(hi);
        }
    }
}

/// True when every accumulated gradient is finite.
pub fn gradients_finite<S: Scalar>(store: &ParamStore<S>) -> bool {
    store.iter().all(|p| p.grad.iter().all(|g| g.is_finite()))
}
