//! Dense layers and small feed-forward stacks built on the tape.

use rand::Rng;

use crate::diffcore::{init_weight, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// `y = W x + b`, weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, bias zero.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.w"), init_weight(outputs, inputs, rng));
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[outputs]));
        Self { weight, bias, inputs, outputs }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, Some(b))
    }

    pub fn zero<S: Scalar>(&self, store: &mut ParamStore<S>) {
        for id in [self.weight, self.bias] {
            store.get_mut(id).value.values_mut().iter_mut().for_each(|v| *v = S::zero());
        }
    }
}

/// Tanh hidden layers followed by a linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Vec<Dense>,
    pub output: Dense,
}

impl Mlp {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        inputs: usize,
        widths: &[usize],
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let mut hidden = Vec::with_capacity(widths.len());
        let mut fan_in = inputs;
        for (l, &w) in widths.iter().enumerate() {
            hidden.push(Dense::new(store, &format!("{name}.hidden{l}"), fan_in, w, rng));
            fan_in = w;
        }
        let output = Dense::new(store, &format!("{name}.out"), fan_in, outputs, rng);
        Self { hidden, output }
    }

    /// Output of the last hidden layer (the input itself when there are none).
    pub fn features<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.hidden {
            let z = layer.forward(tape, store, h)?;
            h = tape.tanh(z)?;
        }
        Ok(h)
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let h = self.features(tape, store, x)?;
        self.output.forward(tape, store, h)
    }
}
