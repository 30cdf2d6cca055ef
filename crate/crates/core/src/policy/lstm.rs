use rand::Rng;

use crate::diffcore::{HasParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::nn::Dense;
use crate::scalar::Scalar;

use super::{ActionSpace, Cursor, EvalCounter, ModelKind, PolicyModel, StepLogits};

/// Single-layer LSTM run once per action dimension.
///
/// Step `i` consumes the state and the previous component and carries
/// `(h, c)` forward. Gate layout inside the stacked weight is
/// `[input, forget, cell, output]`.
///
/// The previous component enters one-hot, so its contribution to the gate
/// pre-activations is one column of the input weight; those columns are
/// stored as rows of `lstm.embed`, with an extra learned row standing in for
/// "no previous component" at the first step. The rest, `W [s; h] + b`, is
/// computed once per prefix and kept in the cursor, so the `k` children of a
/// prefix share it and enumerating them costs one row lookup each.
#[derive(Debug, Clone)]
pub struct LstmPolicy<S> {
    space: ActionSpace,
    state_dim: usize,
    hidden: usize,
    embed: ParamId,
    gates: Dense,
    head: Dense,
    params: ParamStore<S>,
    counter: EvalCounter,
}

impl<S: Scalar> LstmPolicy<S> {
    pub fn new<R: Rng + ?Sized>(space: ActionSpace, state_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let k = space.arity();
        // same scale as a dense layer over the full [state; one-hot; h] input
        let bound = 1.0 / ((state_dim + k + hidden) as f64).sqrt();
        let mut table = Tensor::uniform(&[k + 1, 4 * hidden], bound, rng);
        table.values_mut()[k * 4 * hidden..].iter_mut().for_each(|v| *v = S::zero());
        let embed = params.add("lstm.embed", table);
        let fan_in = state_dim + hidden;
        let gates = Dense {
            weight: params.add("lstm.gates.w", Tensor::uniform(&[4 * hidden, fan_in], bound, rng)),
            bias: params.add("lstm.gates.b", Tensor::zeros(&[4 * hidden])),
            inputs: fan_in,
            outputs: 4 * hidden,
        };
        let head = Dense::new(&mut params, "lstm.out", hidden, k, rng);
        Self { space, state_dim, hidden, embed, gates, head, params, counter: EvalCounter::default() }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    /// `W [s; h] + b`, the part of the next step's gates shared by all components.
    fn shared_gates(&self, tape: &mut Tape<S>, state: Var, h: Var) -> Result<Var> {
        let x = tape.concat(&[state, h])?;
        self.gates.forward(tape, &self.params, x)
    }
}

impl<S: Scalar> HasParams<S> for LstmPolicy<S> {
    fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }
}

impl<S: Scalar> PolicyModel<S> for LstmPolicy<S> {
    fn kind(&self) -> ModelKind {
        ModelKind::Lstm
    }

    fn action_space(&self) -> ActionSpace {
        self.space
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn hidden(&self) -> Vec<usize> {
        vec![self.hidden]
    }

    fn start(&self, tape: &mut Tape<S>, state: Var) -> Result<Cursor> {
        let zeros = vec![S::zero(); self.hidden];
        let h = tape.vector(&zeros)?;
        let c = tape.vector(&zeros)?;
        let shared = self.shared_gates(tape, state, h)?;
        Ok(Cursor { state, prefix: Vec::new(), memory: vec![h, c, shared] })
    }

    fn step_logits(&self, tape: &mut Tape<S>, cursor: &Cursor) -> Result<StepLogits> {
        let (c, shared) = (cursor.memory[1], cursor.memory[2]);
        let n = self.hidden;
        let row = cursor.prefix.last().copied().unwrap_or(self.space.arity());
        let table = tape.param(&self.params, self.embed);
        let prev = tape.index_row(table, row)?;
        let z = tape.add(shared, prev)?;
        let zi = tape.slice(z, 0, n)?;
        let zf = tape.slice(z, n, n)?;
        let zg = tape.slice(z, 2 * n, n)?;
        let zo = tape.slice(z, 3 * n, n)?;
        let input_gate = tape.sigmoid(zi)?;
        let forget_gate = tape.sigmoid(zf)?;
        let candidate = tape.tanh(zg)?;
        let output_gate = tape.sigmoid(zo)?;
        let kept = tape.mul(forget_gate, c)?;
        let written = tape.mul(input_gate, candidate)?;
        let c_next = tape.add(kept, written)?;
        let squashed = tape.tanh(c_next)?;
        let h_next = tape.mul(output_gate, squashed)?;
        let logits = self.head.forward(tape, &self.params, h_next)?;
        let mut memory = vec![h_next, c_next];
        if cursor.prefix.len() + 1 < self.space.dims() {
            memory.push(self.shared_gates(tape, cursor.state, h_next)?);
        }
        Ok(StepLogits { logits, memory })
    }

    fn counter(&self) -> &EvalCounter {
        &self.counter
    }

    fn zero_output_layer(&mut self) {
        self.head.zero(&mut self.params);
    }
}
