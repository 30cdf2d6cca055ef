use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array of up to two dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 || shape.iter().any(|&e| e == 0) {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                detail: format!("unsupported shape {shape:?}"),
            });
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {shape:?} holds {n} values, got {}", values.len()),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn vector(values: Vec<S>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty { op: "vector" });
        }
        Ok(Self { shape: vec![values.len()], values })
    }

    pub fn scalar(value: S) -> Self {
        Self { shape: vec![1], values: vec![value] }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<S>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), values: vec![S::zero(); n] }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let values = (0..n).map(|_| S::lit(rng.gen_range(-bound..=bound))).collect();
        Self { shape: shape.to_vec(), values }
    }

    pub fn identity(n: usize) -> Self {
        let mut values = vec![S::zero(); n * n];
        for i in 0..n {
            values[i * n + i] = S::one();
        }
        Self { shape: vec![n, n], values }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }
}

/// Index of a [`Parameter`] inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient accumulator.
///
/// The accumulator only ever grows through `backward`; it is reset by
/// [`ParamStore::zero_grad`] and nothing else.
#[derive(Debug, Clone)]
pub struct Parameter<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Vec<S>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    params: Vec<Parameter<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let grad = vec![S::zero(); value.len()];
        self.params.push(Parameter { name: name.into(), value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<S> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<S>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = S::zero());
        }
    }

    /// All gradient accumulators concatenated in parameter order.
    pub fn flat_grad(&self) -> Vec<S> {
        self.params.iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    pub fn flat_values(&self) -> Vec<S> {
        self.params.iter().flat_map(|p| p.value.values().iter().copied()).collect()
    }

    /// Flat-index lookup: `(parameter name, element index)`.
    pub fn describe_flat(&self, mut flat: usize) -> Option<(&str, usize)> {
        for p in &self.params {
            if flat < p.value.len() {
                return Some((&p.name, flat));
            }
            flat -= p.value.len();
        }
        None
    }
}

/// Anything that owns a [`ParamStore`].
pub trait HasParams<S: Scalar> {
    fn params(&self) -> &ParamStore<S>;
    fn params_mut(&mut self) -> &mut ParamStore<S>;
}

impl<S: Scalar> HasParams<S> for ParamStore<S> {
    fn params(&self) -> &ParamStore<S> {
        self
    }

    fn params_mut(&mut self) -> &mut ParamStore<S> {
        self
    }
}

/// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_weight<S: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<S> {
    let bound = 1.0 / (cols as f64).sqrt();
    Tensor::uniform(&[rows, cols], bound, rng)
}
