use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::policy::{evaluate, Action, Cursor, PolicyModel};
use crate::scalar::Scalar;

pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// Exact entropy on the tape, with enumeration bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct ExactEntropy {
    pub value: Var,
    /// Distinct prefixes whose conditional was evaluated: `(k^d - 1) / (k - 1)`.
    pub evaluations: u64,
    /// Joint-probability terms summed: `k^d`.
    pub leaves: u64,
}

fn check_budget<S: Scalar, M: PolicyModel<S> + ?Sized>(model: &M, cap: u64) -> Result<()> {
    let required = model.action_space().total_actions();
    if required > cap as u128 {
        return Err(Error::BudgetExceeded { required, cap });
    }
    Ok(())
}

struct Walk {
    dims: usize,
    arity: usize,
    leaves: Vec<Var>,
    evaluations: u64,
}

impl Walk {
    /// Depth-first over the prefix tree; each prefix is evaluated once.
    ///
    /// `raw_lp` is the unfloored log-probability of the prefix (used for the
    /// probability weight) and `lp` the floored one (used inside the log).
    fn descend<S, M>(&mut self, model: &M, tape: &mut Tape<S>, cursor: Cursor, lp: Option<(Var, Var)>) -> Result<()>
    where
        S: Scalar,
        M: PolicyModel<S> + ?Sized,
    {
        let cond = evaluate(model, tape, &cursor)?;
        self.evaluations += 1;
        if cursor.prefix.len() + 1 == self.dims {
            let (raw, floored) = match lp {
                Some((raw, floored)) => (tape.add_scalar(cond.raw_log_probs, raw)?, tape.add_scalar(cond.log_probs, floored)?),
                None => (cond.raw_log_probs, cond.log_probs),
            };
            let p = tape.exp(raw)?;
            let plogp = tape.mul(p, floored)?;
            self.leaves.push(tape.sum(plogp)?);
            return Ok(());
        }
        for a in 0..self.arity {
            let raw_term = tape.index(cond.raw_log_probs, a)?;
            let term = tape.index(cond.log_probs, a)?;
            let child_lp = match lp {
                Some((raw, floored)) => (tape.add(raw, raw_term)?, tape.add(floored, term)?),
                None => (raw_term, term),
            };
            self.descend(model, tape, cursor.child(a, cond.memory.clone()), Some(child_lp))?;
        }
        Ok(())
    }
}

/// `-sum_a p(a) log p(a)` by enumerating every action, differentiable.
pub fn exact_entropy_detailed<S, M>(tape: &mut Tape<S>, model: &M, state: &[S], cap: u64) -> Result<ExactEntropy>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
{
    check_budget(model, cap)?;
    if state.len() != model.state_dim() {
        return Err(Error::StateDim { expected: model.state_dim(), got: state.len() });
    }
    let space = model.action_space();
    let s = tape.vector(state)?;
    let root = model.start(tape, s)?;
    let mut walk = Walk { dims: space.dims(), arity: space.arity(), leaves: Vec::new(), evaluations: 0 };
    walk.descend(model, tape, root, None)?;
    let total = tape.add_n(&walk.leaves)?;
    let value = tape.neg(total)?;
    Ok(ExactEntropy {
        value,
        evaluations: walk.evaluations,
        leaves: (walk.leaves.len() * space.arity()) as u64,
    })
}

/// Exact entropy with the default enumeration cap.
pub fn exact_entropy<S, M>(tape: &mut Tape<S>, model: &M, state: &[S]) -> Result<Var>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
{
    Ok(exact_entropy_detailed(tape, model, state, DEFAULT_ENUMERATION_CAP)?.value)
}

/// Gradient of the exact entropy for every parameter, in store order.
/// The model's own accumulators are left untouched.
pub fn exact_entropy_gradient<S, M>(model: &M, state: &[S]) -> Result<Vec<Vec<S>>>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
{
    let mut tape = Tape::new();
    let h = exact_entropy(&mut tape, model, state)?;
    let mut store = model.params().clone();
    store.zero_grad();
    tape.backward(h, &mut store)?;
    Ok(store.iter().map(|p| p.grad.clone()).collect())
}

/// Every action with its probability, in lexicographic order.
pub fn enumerate_probs<S, M>(model: &M, state: &[S]) -> Result<Vec<(Action, S)>>
where
    S: Scalar,
    M: PolicyModel<S> + ?Sized,
{
    check_budget(model, DEFAULT_ENUMERATION_CAP)?;
    let space = model.action_space();
    let mut tape = Tape::new();
    let s = tape.vector(state)?;
    let root = model.start(&mut tape, s)?;
    let mut out = Vec::with_capacity(space.total_actions() as usize);
    let mut stack = vec![(root, S::one())];
    // explicit stack, children pushed in reverse so output is lexicographic
    while let Some((cursor, p)) = stack.pop() {
        let cond = evaluate(model, &mut tape, &cursor)?;
        let probs = tape.value(cond.probs)?.to_vec();
        if cursor.prefix.len() + 1 == space.dims() {
            for (a, &q) in probs.iter().enumerate() {
                let mut comps = cursor.prefix.clone();
                comps.push(a);
                out.push((Action::new(comps), p * q));
            }
        } else {
            for a in (0..space.arity()).rev() {
                stack.push((cursor.child(a, cond.memory.clone()), p * probs[a]));
            }
        }
    }
    Ok(out)
}
