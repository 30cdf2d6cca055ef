use rand::Rng;

use crate::diffcore::{HasParams, ParamStore, Tape, Var};
use crate::error::Result;
use crate::nn::Mlp;
use crate::scalar::Scalar;

use super::{ActionSpace, Cursor, EvalCounter, ModelKind, PolicyModel, StepLogits};

/// One shared FFN whose input is the state followed by `d - 1` prefix slots.
///
/// A chosen component `c` enters its slot as `(c + 1) / k`; unfilled slots
/// hold the placeholder `0`.
#[derive(Debug, Clone)]
pub struct MmdpPolicy<S> {
    space: ActionSpace,
    state_dim: usize,
    widths: Vec<usize>,
    net: Mlp,
    params: ParamStore<S>,
    counter: EvalCounter,
}

impl<S: Scalar> MmdpPolicy<S> {
    pub fn new<R: Rng + ?Sized>(space: ActionSpace, state_dim: usize, widths: &[usize], rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let inputs = state_dim + space.dims() - 1;
        let net = Mlp::new(&mut params, "mmdp", inputs, widths, space.arity(), rng);
        Self { space, state_dim, widths: widths.to_vec(), net, params, counter: EvalCounter::default() }
    }

    /// FFN input for a given state and prefix.
    pub fn input_vector(&self, state: &[S], prefix: &[usize]) -> Vec<S> {
        let mut input = state.to_vec();
        input.extend(self.prefix_slots(prefix));
        input
    }

    fn prefix_slots(&self, prefix: &[usize]) -> Vec<S> {
        let k = S::lit(self.space.arity() as f64);
        let mut slots = vec![S::zero(); self.space.dims() - 1];
        for (slot, &c) in slots.iter_mut().zip(prefix) {
            *slot = S::lit((c + 1) as f64) / k;
        }
        slots
    }
}

impl<S: Scalar> HasParams<S> for MmdpPolicy<S> {
    fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }
}

impl<S: Scalar> PolicyModel<S> for MmdpPolicy<S> {
    fn kind(&self) -> ModelKind {
        ModelKind::Mmdp
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

    fn start(&self, _tape: &mut Tape<S>, state: Var) -> Result<Cursor> {
        Ok(Cursor { state, prefix: Vec::new(), memory: Vec::new() })
    }

    fn step_logits(&self, tape: &mut Tape<S>, cursor: &Cursor) -> Result<StepLogits> {
        let input = if self.space.dims() > 1 {
            let slots = tape.vector(&self.prefix_slots(&cursor.prefix))?;
            tape.concat(&[cursor.state, slots])?
        } else {
            cursor.state
        };
        let logits = self.net.forward(tape, &self.params, input)?;
        Ok(StepLogits { logits, memory: Vec::new() })
    }

    fn counter(&self) -> &EvalCounter {
        &self.counter
    }

    fn zero_output_layer(&mut self) {
        self.net.output.zero(&mut self.params);
    }
}
