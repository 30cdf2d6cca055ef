//! Entropy-bonus estimators for autoregressive policies.
//!
//! All estimators read the conditionals already recorded in a
//! [`SampleTrace`](crate::policy::SampleTrace), so the per-dimension cost is
//! one conditional evaluation. Exact enumeration is kept as an oracle.
//!
//! | kind                | value                                 | gradient of value + correction        |
//! |---------------------|---------------------------------------|---------------------------------------|
//! | crude               | `-log p(a)`                            | `-grad log p(a)`                       |
//! | smoothed            | `sum_i H_i(a_<i)`                     | `grad sum_i H_i(a_<i)`                |
//! | smoothed mode       | smoothed entropy along the beam action | deterministic, biased                 |
//! | unbiased gradient   | smoothed entropy                      | smoothed gradient plus `sum_i H_i * grad sum_{j<i} log p(a_j)` |
//! | exact               | `-sum_a p(a) log p(a)`                 | exact                                 |

mod exact;
mod gaussian;
mod table;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::policy::{beam_search_trace, PolicyModel, SampleTrace};
use crate::scalar::Scalar;

pub use exact::{
    enumerate_probs, exact_entropy, exact_entropy_detailed, exact_entropy_gradient, ExactEntropy,
    DEFAULT_ENUMERATION_CAP,
};
pub use gaussian::{gaussian_smoothed_check, GaussianReport};
pub use table::SoftmaxTable;

/// Which entropy term enters the policy objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    None,
    Crude,
    Smoothed,
    SmoothedMode { beam: usize },
    UnbiasedGradient,
    Exact,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::None => f.write_str("none"),
            EstimatorKind::Crude => f.write_str("crude"),
            EstimatorKind::Smoothed => f.write_str("smoothed"),
            EstimatorKind::SmoothedMode { beam } => write!(f, "smoothed_mode:{beam}"),
            EstimatorKind::UnbiasedGradient => f.write_str("unbiased_gradient"),
            EstimatorKind::Exact => f.write_str("exact"),
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    /// Accepts `none`, `crude`, `smoothed`, `smoothed_mode[:beam]`,
    /// `unbiased_gradient` and `exact`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let kind = match name {
            "none" => EstimatorKind::None,
            "crude" => EstimatorKind::Crude,
            "smoothed" => EstimatorKind::Smoothed,
            "smoothed_mode" => {
                let beam = match arg {
                    Some(a) => a.parse().map_err(|_| Error::Config(format!("bad beam size in `{s}`")))?,
                    None => 1,
                };
                if beam == 0 {
                    return Err(Error::Config("beam size must be at least 1".into()));
                }
                return Ok(EstimatorKind::SmoothedMode { beam });
            }
            "unbiased_gradient" => EstimatorKind::UnbiasedGradient,
            "exact" => EstimatorKind::Exact,
            _ => return Err(Error::Config(format!("unknown estimator `{s}`"))),
        };
        if arg.is_some() {
            return Err(Error::Config(format!("estimator `{name}` takes no argument")));
        }
        Ok(kind)
    }
}

/// An entropy estimate on the tape.
///
/// `value` is the reported estimate. For the unbiased-gradient kind,
/// `correction` holds the extra term whose gradient (with its coefficients
/// held constant) completes the estimator; its value is not an entropy.
#[derive(Debug, Clone, Copy)]
pub struct EntropyEstimate {
    pub value: Var,
    pub kind: EstimatorKind,
    pub correction: Option<Var>,
}

impl EntropyEstimate {
    /// The scalar to differentiate: `value + correction`.
    pub fn objective<S: Scalar>(&self, tape: &mut Tape<S>) -> Result<Var> {
        match self.correction {
            Some(c) => tape.add(self.value, c),
            None => Ok(self.value),
        }
    }
}

/// `-sum_a p(a) log p(a)` for one conditional.
pub fn conditional_entropy<S: Scalar>(tape: &mut Tape<S>, probs: Var, log_probs: Var) -> Result<Var> {
    let plogp = tape.mul(probs, log_probs)?;
    let total = tape.sum(plogp)?;
    tape.neg(total)
}

fn per_dim_entropies<S: Scalar>(tape: &mut Tape<S>, trace: &SampleTrace) -> Result<Vec<Var>> {
    trace
        .cond_dists
        .iter()
        .zip(&trace.cond_log_dists)
        .map(|(&p, &lp)| conditional_entropy(tape, p, lp))
        .collect()
}

/// `-log p(a)` of the episodic sample.
pub fn crude_entropy<S: Scalar>(tape: &mut Tape<S>, trace: &SampleTrace) -> Result<EntropyEstimate> {
    let lp = trace.log_prob(tape)?;
    let value = tape.neg(lp)?;
    Ok(EntropyEstimate { value, kind: EstimatorKind::Crude, correction: None })
}

/// Sum over dimensions of the exact conditional entropy along the sampled prefix.
pub fn smoothed_entropy<S: Scalar>(tape: &mut Tape<S>, trace: &SampleTrace) -> Result<EntropyEstimate> {
    let terms = per_dim_entropies(tape, trace)?;
    let value = tape.add_n(&terms)?;
    Ok(EntropyEstimate { value, kind: EstimatorKind::Smoothed, correction: None })
}

/// Smoothed entropy along the beam-search action instead of the episodic one.
/// Deterministic given the parameters.
pub fn smoothed_mode_entropy<S, M>(tape: &mut Tape<S>, model: &M, state: &[S], beam: usize) -> Result<EntropyEstimate>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
{
    let trace = beam_search_trace(model, tape, state, beam)?;
    let smoothed = smoothed_entropy(tape, &trace)?;
    Ok(EntropyEstimate { kind: EstimatorKind::SmoothedMode { beam }, ..smoothed })
}

/// Smoothed entropy plus the correction
/// `sum_i stop_grad(H_i(a_<i)) * sum_{j<i} log p(a_j | a_<j)`.
///
/// Differentiating `value + correction` gives an unbiased estimate of the
/// entropy gradient from a single sample.
pub fn unbiased_entropy_gradient_estimate<S: Scalar>(tape: &mut Tape<S>, trace: &SampleTrace) -> Result<EntropyEstimate> {
    let terms = per_dim_entropies(tape, trace)?;
    let value = tape.add_n(&terms)?;
    let mut pieces = Vec::with_capacity(terms.len().saturating_sub(1));
    let mut prefix_lp = trace.log_prob_terms[0];
    for i in 1..terms.len() {
        let coeff = tape.detach(terms[i])?;
        pieces.push(tape.mul(coeff, prefix_lp)?);
        prefix_lp = tape.add(prefix_lp, trace.log_prob_terms[i])?;
    }
    let correction = if pieces.is_empty() { tape.scalar_const(S::zero()) } else { tape.add_n(&pieces)? };
    Ok(EntropyEstimate { value, kind: EstimatorKind::UnbiasedGradient, correction: Some(correction) })
}

/// Scalar whose gradient is `-log p(a) * grad log p(a)`, the single-sample
/// form of `grad H = E[-log p(A) grad log p(A)]`.
pub fn crude_entropy_gradient_estimate<S: Scalar>(tape: &mut Tape<S>, trace: &SampleTrace) -> Result<Var> {
    let lp = trace.log_prob(tape)?;
    let coeff = tape.detach(lp)?;
    let prod = tape.mul(coeff, lp)?;
    tape.neg(prod)
}

/// Builds the estimate selected by `kind`; `None` for [`EstimatorKind::None`].
pub fn estimate<S, M>(
    kind: EstimatorKind,
    tape: &mut Tape<S>,
    model: &M,
    state: &[S],
    trace: &SampleTrace,
) -> Result<Option<EntropyEstimate>>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
{
    Ok(Some(match kind {
        EstimatorKind::None => return Ok(None),
        EstimatorKind::Crude => crude_entropy(tape, trace)?,
        EstimatorKind::Smoothed => smoothed_entropy(tape, trace)?,
        EstimatorKind::SmoothedMode { beam } => smoothed_mode_entropy(tape, model, state, beam)?,
        EstimatorKind::UnbiasedGradient => unbiased_entropy_gradient_estimate(tape, trace)?,
        EstimatorKind::Exact => {
            let value = exact_entropy(tape, model, state)?;
            EntropyEstimate { value, kind, correction: None }
        }
    }))
}
