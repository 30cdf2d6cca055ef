use rand::Rng;

use crate::diffcore::{HasParams, ParamStore, Tape, Var};
use crate::error::Result;
use crate::nn::Mlp;
use crate::scalar::Scalar;

use super::{ActionSpace, Cursor, EvalCounter, ModelKind, PolicyModel, StepLogits};

/// Independent sampling: one FFN trunk with `d` softmax heads that see only
/// the state. Conditionals do not depend on the prefix.
#[derive(Debug, Clone)]
pub struct IsPolicy<S> {
    space: ActionSpace,
    state_dim: usize,
    widths: Vec<usize>,
    net: Mlp,
    params: ParamStore<S>,
    counter: EvalCounter,
}

impl<S: Scalar> IsPolicy<S> {
    pub fn new<R: Rng + ?Sized>(space: ActionSpace, state_dim: usize, widths: &[usize], rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let net = Mlp::new(&mut params, "is", state_dim, widths, space.dims() * space.arity(), rng);
        Self { space, state_dim, widths: widths.to_vec(), net, params, counter: EvalCounter::default() }
    }
}

impl<S: Scalar> HasParams<S> for IsPolicy<S> {
    fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }
}

impl<S: Scalar> PolicyModel<S> for IsPolicy<S> {
    fn kind(&self) -> ModelKind {
        ModelKind::Is
    }

    fn action_space(&self) -> ActionSpace {
        self.space
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn hidden(&self) -> Vec<usize> {
        self.widths.clone()
    }

    fn start(&self, tape: &mut Tape<S>, state: Var) -> Result<Cursor> {
        let heads = self.net.forward(tape, &self.params, state)?;
        Ok(Cursor { state, prefix: Vec::new(), memory: vec![heads] })
    }

    fn step_logits(&self, tape: &mut Tape<S>, cursor: &Cursor) -> Result<StepLogits> {
        let k = self.space.arity();
        let logits = tape.slice(cursor.memory[0], cursor.prefix.len() * k, k)?;
        Ok(StepLogits { logits, memory: cursor.memory.clone() })
    }

    fn counter(&self) -> &EvalCounter {
        &self.counter
    }

    fn zero_output_layer(&mut self) {
        self.net.output.zero(&mut self.params);
    }
}
