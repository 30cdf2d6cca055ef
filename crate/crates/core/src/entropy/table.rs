use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{HasParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::policy::{ActionSpace, Cursor, EvalCounter, ModelKind, PolicyModel, StepLogits};
use crate::scalar::Scalar;

/// Fully tabulated autoregressive distribution: one logit row per prefix.
///
/// Dimension `i` owns a `[k^i, k]` table whose row is selected by the
/// base-`k` encoding of the prefix. Logits are divided by a temperature, so
/// large temperatures approach the uniform law and small ones approach a
/// point mass. The state is ignored. Limited to `d <= 3`, `k <= 6`.
#[derive(Debug, Clone)]
pub struct SoftmaxTable<S> {
    space: ActionSpace,
    tables: Vec<ParamId>,
    temperature: S,
    params: ParamStore<S>,
    counter: EvalCounter,
}

impl<S: Scalar> SoftmaxTable<S> {
    pub const MAX_DIMS: usize = 3;
    pub const MAX_ARITY: usize = 6;

    /// Builds a table from explicit logits, one `[k^i * k]` row-major block per dimension.
    pub fn from_logits(space: ActionSpace, logits: Vec<Vec<S>>) -> Result<Self> {
        let (d, k) = (space.dims(), space.arity());
        if d > Self::MAX_DIMS || k > Self::MAX_ARITY {
            return Err(Error::InvalidArgument(format!("softmax table supports d <= 3, k <= 6; got d={d}, k={k}")));
        }
        if logits.len() != d {
            return Err(Error::InvalidArgument(format!("expected {d} logit blocks, got {}", logits.len())));
        }
        let mut params = ParamStore::new();
        let mut tables = Vec::with_capacity(d);
        for (i, block) in logits.into_iter().enumerate() {
            let rows = k.pow(i as u32);
            tables.push(params.add(format!("table{i}"), Tensor::matrix(rows, k, block)?));
        }
        Ok(Self { space, tables, temperature: S::one(), params, counter: EvalCounter::default() })
    }

    /// Logits drawn from `N(0, scale^2)`.
    pub fn random<R: Rng + ?Sized>(space: ActionSpace, scale: f64, rng: &mut R) -> Result<Self> {
        let k = space.arity();
        let logits = (0..space.dims())
            .map(|i| {
                (0..k.pow(i as u32) * k)
                    .map(|_| S::lit(scale * rng.sample::<f64, _>(StandardNormal)))
                    .collect()
            })
            .collect();
        Self::from_logits(space, logits)
    }

    /// All logits zero: the uniform law over `k^d` actions.
    pub fn uniform(space: ActionSpace) -> Result<Self> {
        let k = space.arity();
        let logits = (0..space.dims()).map(|i| vec![S::zero(); k.pow(i as u32) * k]).collect();
        Self::from_logits(space, logits)
    }

    /// Every conditional puts all but `e^-margin` of its mass on `target[i]`.
    pub fn peaked(space: ActionSpace, target: &[usize], margin: f64) -> Result<Self> {
        let k = space.arity();
        let logits = (0..space.dims())
            .map(|i| {
                let rows = k.pow(i as u32);
                let mut block = vec![S::lit(-margin); rows * k];
                for r in 0..rows {
                    block[r * k + target[i]] = S::zero();
                }
                block
            })
            .collect();
        Self::from_logits(space, logits)
    }

    pub fn with_temperature(mut self, temperature: S) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn temperature(&self) -> S {
        self.temperature
    }

    pub fn set_temperature(&mut self, temperature: S) {
        self.temperature = temperature;
    }

    pub fn table(&self, dim: usize) -> ParamId {
        self.tables[dim]
    }

    fn row(&self, prefix: &[usize]) -> usize {
        prefix.iter().fold(0, |acc, &c| acc * self.space.arity() + c)
    }
}

impl<S: Scalar> HasParams<S> for SoftmaxTable<S> {
    fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }
}

impl<S: Scalar> PolicyModel<S> for SoftmaxTable<S> {
    fn kind(&self) -> ModelKind {
        ModelKind::Table
    }

    fn action_space(&self) -> ActionSpace {
        self.space
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn hidden(&self) -> Vec<usize> {
        Vec::new()
    }

    fn start(&self, _tape: &mut Tape<S>, state: Var) -> Result<Cursor> {
        Ok(Cursor { state, prefix: Vec::new(), memory: Vec::new() })
    }

    fn step_logits(&self, tape: &mut Tape<S>, cursor: &Cursor) -> Result<StepLogits> {
        let i = cursor.prefix.len();
        let table = tape.param(&self.params, self.tables[i]);
        let row = tape.index_row(table, self.row(&cursor.prefix))?;
        let logits = if self.temperature == S::one() { row } else { tape.scale(row, S::one() / self.temperature)? };
        Ok(StepLogits { logits, memory: Vec::new() })
    }

    fn counter(&self) -> &EvalCounter {
        &self.counter
    }

    fn zero_output_layer(&mut self) {
        for p in self.params.iter_mut() {
            p.value.values_mut().iter_mut().for_each(|v| *v = S::zero());
        }
    }
}
