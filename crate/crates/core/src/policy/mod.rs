//! Autoregressive policies `p(a) = prod_i p(a_i | a_1..a_{i-1})` over a
//! `d`-dimensional discrete action space with `k` choices per dimension.
//!
//! Every model exposes a single-step contract ([`PolicyModel::step_logits`]);
//! sampling, teacher-forced scoring, greedy decoding and beam search are
//! written once on top of it.

mod checkpoint;
mod is;
mod lstm;
mod mmdp;

use std::cell::Cell;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{HasParams, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use checkpoint::{load_checkpoint, read_header, save_checkpoint, CheckpointHeader};
pub use is::IsPolicy;
pub use lstm::LstmPolicy;
pub use mmdp::MmdpPolicy;

/// Conditional probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSpace {
    dims: usize,
    arity: usize,
}

impl ActionSpace {
    pub fn new(dims: usize, arity: usize) -> Result<Self> {
        if dims < 1 || arity < 2 {
            return Err(Error::InvalidArgument(format!(
                "action space needs d >= 1 and k >= 2, got d={dims}, k={arity}"
            )));
        }
        Ok(Self { dims, arity })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// `k^d`, saturating.
    pub fn total_actions(&self) -> u128 {
        (self.arity as u128).checked_pow(self.dims as u32).unwrap_or(u128::MAX)
    }

    pub fn validate(&self, action: &Action) -> Result<()> {
        if action.len() != self.dims {
            return Err(Error::InvalidAction(format!(
                "expected {} components, got {}",
                self.dims,
                action.len()
            )));
        }
        self.validate_prefix(action.components())
    }

    fn validate_prefix(&self, prefix: &[usize]) -> Result<()> {
        match prefix.iter().find(|&&c| c >= self.arity) {
            Some(c) => Err(Error::InvalidAction(format!("component {c} outside [0, {})", self.arity))),
            None => Ok(()),
        }
    }

    /// All actions in lexicographic order. Only sensible for tiny spaces.
    pub fn enumerate(&self) -> impl Iterator<Item = Action> + '_ {
        let total = self.total_actions() as usize;
        (0..total).map(move |mut idx| {
            let mut comps = vec![0; self.dims];
            for c in comps.iter_mut().rev() {
                *c = idx % self.arity;
                idx /= self.arity;
            }
            Action(comps)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action(Vec<usize>);

impl Action {
    pub fn new(components: Vec<usize>) -> Self {
        Self(components)
    }

    pub fn components(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// An action together with the per-dimension conditionals that produced it.
///
/// This is the shared input of every entropy estimator: the conditionals
/// are already on the tape, so estimators need no extra forward passes.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub action: Action,
    /// `p(. | a_1..a_{i-1})` for each dimension, length-`k` vectors.
    pub cond_dists: Vec<Var>,
    /// Floored `log p(. | a_1..a_{i-1})`, length-`k` vectors.
    pub cond_log_dists: Vec<Var>,
    /// `log p(a_i | a_1..a_{i-1})` scalars.
    pub log_prob_terms: Vec<Var>,
}

impl SampleTrace {
    /// `log p(a)` as a tape node.
    pub fn log_prob<S: Scalar>(&self, tape: &mut Tape<S>) -> Result<Var> {
        tape.add_n(&self.log_prob_terms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Is,
    Mmdp,
    Lstm,
    Table,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Is => "is",
            ModelKind::Mmdp => "mmdp",
            ModelKind::Lstm => "lstm",
            ModelKind::Table => "table",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "is" => Ok(ModelKind::Is),
            "mmdp" => Ok(ModelKind::Mmdp),
            "lstm" => Ok(ModelKind::Lstm),
            "table" => Ok(ModelKind::Table),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Position inside one autoregressive decode: the state, the components
/// chosen so far and whatever recurrent memory the model carries.
#[derive(Debug, Clone)]
pub struct Cursor {
    pub state: Var,
    pub prefix: Vec<usize>,
    pub memory: Vec<Var>,
}

impl Cursor {
    pub fn child(&self, component: usize, memory: Vec<Var>) -> Cursor {
        let mut prefix = Vec::with_capacity(self.prefix.len() + 1);
        prefix.extend_from_slice(&self.prefix);
        prefix.push(component);
        Cursor { state: self.state, prefix, memory }
    }
}

/// Output of one model step: unnormalized scores for the next component and
/// the memory handed to the child cursor.
#[derive(Debug, Clone)]
pub struct StepLogits {
    pub logits: Var,
    pub memory: Vec<Var>,
}

/// Counts conditional-distribution evaluations.
#[derive(Debug, Default)]
pub struct EvalCounter(Cell<u64>);

impl EvalCounter {
    pub fn bump(&self) {
        self.0.set(self.0.get() + 1);
    }

    pub fn get(&self) -> u64 {
        self.0.get()
    }

    pub fn reset(&self) {
        self.0.set(0);
    }
}

impl Clone for EvalCounter {
    fn clone(&self) -> Self {
        Self(Cell::new(0))
    }
}

/// Contract shared by every parameterized autoregressive policy.
pub trait PolicyModel<S: Scalar>: HasParams<S> {
    fn kind(&self) -> ModelKind;
    fn action_space(&self) -> ActionSpace;
    fn state_dim(&self) -> usize;

    /// Hidden layer widths (model-specific meaning), recorded in checkpoints.
    fn hidden(&self) -> Vec<usize>;

    /// Records the state on the tape and any per-state precomputation.
    fn start(&self, tape: &mut Tape<S>, state: Var) -> Result<Cursor>;

    /// Logits of `p(. | cursor.prefix)`. `cursor.prefix.len() < d`.
    fn step_logits(&self, tape: &mut Tape<S>, cursor: &Cursor) -> Result<StepLogits>;

    fn counter(&self) -> &EvalCounter;

    /// Zeroes the final linear layer so every conditional is uniform.
    fn zero_output_layer(&mut self);
}

/// One evaluated conditional.
#[derive(Debug, Clone)]
pub struct Conditional {
    pub probs: Var,
    /// Floored at `ln(PROB_FLOOR)`.
    pub log_probs: Var,
    /// Unfloored log-softmax.
    pub raw_log_probs: Var,
    pub memory: Vec<Var>,
}

/// Evaluates `p(. | cursor.prefix)` and its floored log.
pub fn evaluate<S, M>(model: &M, tape: &mut Tape<S>, cursor: &Cursor) -> Result<Conditional>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
{
    let d = model.action_space().dims();
    if cursor.prefix.len() >= d {
        return Err(Error::PrefixTooLong { len: cursor.prefix.len(), dims: d });
    }
    model.counter().bump();
    let StepLogits { logits, memory } = model.step_logits(tape, cursor)?;
    let probs = tape.softmax(logits)?;
    let raw = tape.log_softmax(logits)?;
    let log_probs = tape.clamp_min(raw, S::lit(PROB_FLOOR.ln()))?;
    Ok(Conditional { probs, log_probs, raw_log_probs: raw, memory })
}

fn begin<S, M>(model: &M, tape: &mut Tape<S>, state: &[S]) -> Result<Cursor>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
{
    if state.len() != model.state_dim() {
        return Err(Error::StateDim { expected: model.state_dim(), got: state.len() });
    }
    let s = tape.vector(state)?;
    model.start(tape, s)
}

/// `p(. | prefix)` for a partial action of length at most `d - 1`.
pub fn conditional_dist<S, M>(model: &M, tape: &mut Tape<S>, state: &[S], prefix: &[usize]) -> Result<Var>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
{
    let space = model.action_space();
    if prefix.len() >= space.dims() {
        return Err(Error::PrefixTooLong { len: prefix.len(), dims: space.dims() });
    }
    space.validate_prefix(prefix)?;
    let mut cursor = begin(model, tape, state)?;
    for &c in prefix {
        let cond = evaluate(model, tape, &cursor)?;
        cursor = cursor.child(c, cond.memory);
    }
    Ok(evaluate(model, tape, &cursor)?.probs)
}

fn draw<S: Scalar, R: Rng + ?Sized>(probs: &[S], rng: &mut R) -> Result<usize> {
    if probs.iter().any(|p| !p.is_finite()) {
        let shown: Vec<f64> = probs.iter().map(|p| p.as_f64()).collect();
        return Err(Error::NonFinite(format!("conditional distribution {shown:?}")));
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(last_positive)
}

/// Samples one action dimension by dimension, keeping every conditional on
/// the tape. Performs exactly `d` conditional evaluations.
pub fn sample<S, M, R>(model: &M, tape: &mut Tape<S>, state: &[S], rng: &mut R) -> Result<SampleTrace>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
    R: Rng + ?Sized,
{
    let d = model.action_space().dims();
    let mut cursor = begin(model, tape, state)?;
    let mut trace = SampleTrace {
        action: Action(Vec::with_capacity(d)),
        cond_dists: Vec::with_capacity(d),
        cond_log_dists: Vec::with_capacity(d),
        log_prob_terms: Vec::with_capacity(d),
    };
    for _ in 0..d {
        let cond = evaluate(model, tape, &cursor)?;
        let a = draw(tape.value(cond.probs)?, rng)?;
        let term = tape.index(cond.log_probs, a)?;
        trace.action.0.push(a);
        trace.cond_dists.push(cond.probs);
        trace.cond_log_dists.push(cond.log_probs);
        trace.log_prob_terms.push(term);
        cursor = cursor.child(a, cond.memory);
    }
    Ok(trace)
}

/// Teacher-forced trace of a given action: same layout as [`sample`].
pub fn trace_action<S, M>(model: &M, tape: &mut Tape<S>, state: &[S], action: &Action) -> Result<SampleTrace>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
{
    model.action_space().validate(action)?;
    let d = action.len();
    let mut cursor = begin(model, tape, state)?;
    let mut trace = SampleTrace {
        action: action.clone(),
        cond_dists: Vec::with_capacity(d),
        cond_log_dists: Vec::with_capacity(d),
        log_prob_terms: Vec::with_capacity(d),
    };
    for &a in action.components() {
        let cond = evaluate(model, tape, &cursor)?;
        trace.log_prob_terms.push(tape.index(cond.log_probs, a)?);
        trace.cond_dists.push(cond.probs);
        trace.cond_log_dists.push(cond.log_probs);
        cursor = cursor.child(a, cond.memory);
    }
    Ok(trace)
}

/// `log p(action | state)` as a differentiable tape node.
pub fn log_prob<S, M>(model: &M, tape: &mut Tape<S>, state: &[S], action: &Action) -> Result<Var>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
{
    let trace = trace_action(model, tape, state, action)?;
    trace.log_prob(tape)
}

struct Beam {
    cursor: Cursor,
    score: f64,
    dists: Vec<Var>,
    log_dists: Vec<Var>,
    terms: Vec<Var>,
}

/// Beam search over the chained conditionals, recorded on `tape`.
///
/// Candidates are ranked by chained log-probability; ties go to the
/// lexicographically smallest action. `beam = 1` is greedy decoding.
pub fn beam_search_trace<S, M>(model: &M, tape: &mut Tape<S>, state: &[S], beam: usize) -> Result<SampleTrace>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
{
    if beam == 0 {
        return Err(Error::InvalidArgument("beam size must be at least 1".into()));
    }
    let space = model.action_space();
    let start = begin(model, tape, state)?;
    let mut beams = vec![Beam { cursor: start, score: 0.0, dists: vec![], log_dists: vec![], terms: vec![] }];
    for _ in 0..space.dims() {
        let mut expanded = Vec::with_capacity(beams.len());
        let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(beams.len() * space.arity());
        for (bi, b) in beams.iter().enumerate() {
            let cond = evaluate(model, tape, &b.cursor)?;
            for (a, lp) in tape.value(cond.log_probs)?.iter().enumerate() {
                candidates.push((b.score + lp.as_f64(), bi, a));
            }
            expanded.push(cond);
        }
        // equal scores: lexicographically smallest extended prefix first
        candidates.sort_by(|x, y| {
            y.0.total_cmp(&x.0).then_with(|| {
                beams[x.1].cursor.prefix.cmp(&beams[y.1].cursor.prefix).then(x.2.cmp(&y.2))
            })
        });
        candidates.truncate(beam);
        let mut next = Vec::with_capacity(candidates.len());
        for (score, bi, a) in candidates {
            let b = &beams[bi];
            let cond = &expanded[bi];
            let term = tape.index(cond.log_probs, a)?;
            let mut dists = b.dists.clone();
            dists.push(cond.probs);
            let mut log_dists = b.log_dists.clone();
            log_dists.push(cond.log_probs);
            let mut terms = b.terms.clone();
            terms.push(term);
            next.push(Beam { cursor: b.cursor.child(a, cond.memory.clone()), score, dists, log_dists, terms });
        }
        beams = next;
    }
    let best = beams.into_iter().next().expect("beam is non-empty");
    Ok(SampleTrace {
        action: Action(best.cursor.prefix),
        cond_dists: best.dists,
        cond_log_dists: best.log_dists,
        log_prob_terms: best.terms,
    })
}

pub fn beam_search<S, M>(model: &M, state: &[S], beam: usize) -> Result<Action>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
{
    let mut tape = Tape::new();
    Ok(beam_search_trace(model, &mut tape, state, beam)?.action)
}

/// Componentwise argmax given earlier greedy picks.
pub fn greedy_action<S, M>(model: &M, state: &[S]) -> Result<Action>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
{
    beam_search(model, state, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_space_validation() {
        assert!(ActionSpace::new(0, 3).is_err());
        assert!(ActionSpace::new(2, 1).is_err());
        let space = ActionSpace::new(2, 3).unwrap();
        assert_eq!(space.total_actions(), 9);
        assert!(space.validate(&Action::new(vec![0, 2])).is_ok());
        assert!(space.validate(&Action::new(vec![0, 3])).is_err());
        assert!(space.validate(&Action::new(vec![0])).is_err());
    }

    #[test]
    fn enumerate_is_lexicographic() {
        let space = ActionSpace::new(2, 2).unwrap();
        let all: Vec<_> = space.enumerate().map(|a| a.components().to_vec()).collect();
        assert_eq!(all, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn draw_handles_rounding_tail() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_eq!(draw(&[0.0f64, 1.0, 0.0], &mut rng).unwrap(), 1);
        assert!(draw(&[f64::NAN, 1.0], &mut rng).is_err());
    }
}
