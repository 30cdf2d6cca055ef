use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::{ParamId, ParamStore, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Dot product with eight independent accumulators, so the compiler can
/// vectorize it; the summation order is fixed, hence deterministic.
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    const LANES: usize = 8;
    let mut acc = [S::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = S::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dims {
    Vector(usize),
    Matrix(usize, usize),
}

impl Dims {
    fn len(self) -> usize {
        match self {
            Dims::Vector(n) => n,
            Dims::Matrix(r, c) => r * c,
        }
    }

    fn to_vec(self) -> Vec<usize> {
        match self {
            Dims::Vector(n) => vec![n],
            Dims::Matrix(r, c) => vec![r, c],
        }
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Param(ParamId),
    Linear { w: usize, x: usize, b: Option<usize> },
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddN(Vec<usize>),
    AddScalar { x: usize, s: usize },
    MulScalar { x: usize, s: usize },
    Scale(usize, S),
    Concat(Vec<usize>),
    Index(usize, usize),
    Row(usize, usize),
    Slice(usize, usize),
    Sum(usize),
    ClampMin(usize, S),
}

#[derive(Debug, Clone)]
struct Node<S> {
    value: Vec<S>,
    dims: Dims,
    op: Op<S>,
    /// Whether any parameter is upstream of this node.
    live: bool,
}

/// Define-by-run record of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so parents always precede children.
/// A tape is rebuilt for every forward pass; [`Tape::clear`] reuses the
/// allocation and invalidates every previously issued [`Var`].
#[derive(Debug)]
pub struct Tape<S> {
    id: u64,
    nodes: Vec<Node<S>>,
    param_vars: Vec<Option<usize>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn clear(&mut self) {
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
        self.nodes.clear();
        self.param_vars.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Current length, for a later [`Tape::rewind`].
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drops every node recorded after `mark`, keeping earlier ones (for
    /// example parameters registered once per episode). Variables created
    /// after the mark must not be used again.
    pub fn rewind(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        for slot in &mut self.param_vars {
            if slot.is_some_and(|i| i >= mark) {
                *slot = None;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<S>, dims: Dims, op: Op<S>) -> Var {
        debug_assert_eq!(value.len(), dims.len());
        let live = self.depends_on_params(&op);
        self.nodes.push(Node { value, dims, op, live });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    fn depends_on_params(&self, op: &Op<S>) -> bool {
        let live = |i: &usize| self.nodes[*i].live;
        match op {
            Op::Leaf => false,
            Op::Param(_) => true,
            Op::Linear { w, x, b } => live(w) || live(x) || b.as_ref().is_some_and(live),
            Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::Exp(x)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::Scale(x, _)
            | Op::Index(x, _)
            | Op::Row(x, _)
            | Op::Slice(x, _)
            | Op::Sum(x)
            | Op::ClampMin(x, _) => live(x),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => live(a) || live(b),
            Op::AddScalar { x, s } | Op::MulScalar { x, s } => live(x) || live(s),
            Op::AddN(parts) | Op::Concat(parts) => parts.iter().any(live),
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    fn vector_idx(&self, v: Var, op: &'static str) -> Result<usize> {
        let i = self.idx(v)?;
        match self.nodes[i].dims {
            Dims::Vector(_) => Ok(i),
            Dims::Matrix(r, c) => Err(Error::ShapeMismatch {
                op,
                detail: format!("expected a vector, got a {r}x{c} matrix"),
            }),
        }
    }

    pub fn owns(&self, v: Var) -> bool {
        self.idx(v).is_ok()
    }

    pub fn value(&self, v: Var) -> Result<&[S]> {
        let i = self.idx(v)?;
        Ok(&self.nodes[i].value)
    }

    /// Value of a single-element variable.
    pub fn scalar(&self, v: Var) -> Result<S> {
        let i = self.idx(v)?;
        match self.nodes[i].value.as_slice() {
            [x] => Ok(*x),
            other => Err(Error::NotScalar { len: other.len() }),
        }
    }

    pub fn shape(&self, v: Var) -> Result<Vec<usize>> {
        let i = self.idx(v)?;
        Ok(self.nodes[i].dims.to_vec())
    }

    pub fn constant(&mut self, t: &Tensor<S>) -> Var {
        let dims = match t.shape() {
            [n] => Dims::Vector(*n),
            [r, c] => Dims::Matrix(*r, *c),
            _ => unreachable!("tensor rank is checked at construction"),
        };
        self.push(t.values().to_vec(), dims, Op::Leaf)
    }

    pub fn vector(&mut self, values: &[S]) -> Result<Var> {
        if values.is_empty() {
            return Err(Error::Empty { op: "vector" });
        }
        Ok(self.push(values.to_vec(), Dims::Vector(values.len()), Op::Leaf))
    }

    pub fn scalar_const(&mut self, value: S) -> Var {
        self.push(vec![value], Dims::Vector(1), Op::Leaf)
    }

    /// Registers a parameter on the tape. Repeated calls return the same node,
    /// so gradients from every use are summed into one accumulator.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(Some(i)) = self.param_vars.get(id.0) {
            return Var { tape: self.id, index: *i };
        }
        let p = store.get(id);
        let dims = match p.value.shape() {
            [n] => Dims::Vector(*n),
            [r, c] => Dims::Matrix(*r, *c),
            _ => unreachable!("tensor rank is checked at construction"),
        };
        let v = self.push(p.value.values().to_vec(), dims, Op::Param(id));
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(v.index);
        v
    }

    /// Copy of `v` with no gradient path (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let i = self.idx(v)?;
        let node = &self.nodes[i];
        let (value, dims) = (node.value.clone(), node.dims);
        Ok(self.push(value, dims, Op::Leaf))
    }

    /// `w · x + b` for a matrix `w` of shape `[m, n]`, vector `x` of length `n`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xi = self.vector_idx(x, "linear")?;
        let wi = self.idx(w)?;
        let (m, n) = match self.nodes[wi].dims {
            Dims::Matrix(m, n) => (m, n),
            Dims::Vector(n) => {
                return Err(Error::ShapeMismatch {
                    op: "linear",
                    detail: format!("weight must be a matrix, got a vector of {n}"),
                })
            }
        };
        let xl = self.nodes[xi].value.len();
        if xl != n {
            return Err(Error::ShapeMismatch {
                op: "linear",
                detail: format!("weight is {m}x{n} but input has {xl} entries"),
            });
        }
        let bi = match b {
            Some(b) => {
                let bi = self.vector_idx(b, "linear")?;
                let bl = self.nodes[bi].value.len();
                if bl != m {
                    return Err(Error::ShapeMismatch {
                        op: "linear",
                        detail: format!("bias has {bl} entries, expected {m}"),
                    });
                }
                Some(bi)
            }
            None => None,
        };
        let wv = &self.nodes[wi].value;
        let xv = &self.nodes[xi].value;
        let mut out: Vec<S> = match bi {
            Some(bi) => self.nodes[bi].value.clone(),
            None => vec![S::zero(); m],
        };
        for (row, o) in wv.chunks_exact(n).zip(out.iter_mut()) {
            *o = *o + dot(row, xv);
        }
        Ok(self.push(out, Dims::Vector(m), Op::Linear { w: wi, x: xi, b: bi }))
    }

    fn unary(&mut self, x: Var, op: fn(usize) -> Op<S>, f: impl Fn(S) -> S) -> Result<Var> {
        let i = self.idx(x)?;
        let node = &self.nodes[i];
        let value = node.value.iter().map(|&v| f(v)).collect();
        let dims = node.dims;
        Ok(self.push(value, dims, op(i)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh, |v| v.tanh())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid, |v| {
            if v >= S::zero() {
                S::one() / (S::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (S::one() + e)
            }
        })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu, |v| v.max(S::zero()))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp, |v| v.exp())
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let i = self.vector_idx(x, "softmax")?;
        let value = softmax_values(&self.nodes[i].value);
        let n = value.len();
        Ok(self.push(value, Dims::Vector(n), Op::Softmax(i)))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let i = self.vector_idx(x, "log_softmax")?;
        let value = log_softmax_values(&self.nodes[i].value);
        let n = value.len();
        Ok(self.push(value, Dims::Vector(n), Op::LogSoftmax(i)))
    }

    fn binary_idx(&self, a: Var, b: Var, op: &'static str) -> Result<(usize, usize)> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (da, db) = (self.nodes[ai].dims, self.nodes[bi].dims);
        if da != db {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", da.to_vec(), db.to_vec()),
            });
        }
        Ok((ai, bi))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, op: fn(usize, usize) -> Op<S>, f: impl Fn(S, S) -> S) -> Result<Var> {
        let (ai, bi) = self.binary_idx(a, b, name)?;
        let value = self.nodes[ai]
            .value
            .iter()
            .zip(&self.nodes[bi].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let dims = self.nodes[ai].dims;
        Ok(self.push(value, dims, op(ai, bi)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub, |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul, |x, y| x * y)
    }

    /// Elementwise sum of any number of equally shaped variables.
    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var> {
        let Some(&first) = vars.first() else {
            return Err(Error::Empty { op: "add_n" });
        };
        let fi = self.idx(first)?;
        let dims = self.nodes[fi].dims;
        let mut idx = Vec::with_capacity(vars.len());
        let mut value = vec![S::zero(); dims.len()];
        for &v in vars {
            let i = self.idx(v)?;
            if self.nodes[i].dims != dims {
                return Err(Error::ShapeMismatch {
                    op: "add_n",
                    detail: format!("{:?} vs {:?}", dims.to_vec(), self.nodes[i].dims.to_vec()),
                });
            }
            for (o, x) in value.iter_mut().zip(&self.nodes[i].value) {
                *o = *o + *x;
            }
            idx.push(i);
        }
        Ok(self.push(value, dims, Op::AddN(idx)))
    }

    fn scalar_idx(&self, s: Var, op: &'static str) -> Result<usize> {
        let si = self.idx(s)?;
        let len = self.nodes[si].value.len();
        if len != 1 {
            return Err(Error::ShapeMismatch { op, detail: format!("expected a scalar, got {len} entries") });
        }
        Ok(si)
    }

    /// Adds the scalar `s` to every entry of `x`.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let si = self.scalar_idx(s, "add_scalar")?;
        let sv = self.nodes[si].value[0];
        let value = self.nodes[xi].value.iter().map(|&v| v + sv).collect();
        let dims = self.nodes[xi].dims;
        Ok(self.push(value, dims, Op::AddScalar { x: xi, s: si }))
    }

    /// Multiplies every entry of `x` by the scalar variable `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let si = self.scalar_idx(s, "mul_scalar")?;
        let sv = self.nodes[si].value[0];
        let value = self.nodes[xi].value.iter().map(|&v| v * sv).collect();
        let dims = self.nodes[xi].dims;
        Ok(self.push(value, dims, Op::MulScalar { x: xi, s: si }))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, c: S) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi].value.iter().map(|&v| v * c).collect();
        let dims = self.nodes[xi].dims;
        Ok(self.push(value, dims, Op::Scale(xi, c)))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -S::one())
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty { op: "concat" });
        }
        let mut idx = Vec::with_capacity(parts.len());
        let mut value = Vec::new();
        for &p in parts {
            let i = self.vector_idx(p, "concat")?;
            value.extend_from_slice(&self.nodes[i].value);
            idx.push(i);
        }
        let n = value.len();
        Ok(self.push(value, Dims::Vector(n), Op::Concat(idx)))
    }

    /// Single entry of a vector, as a scalar.
    pub fn index(&mut self, x: Var, i: usize) -> Result<Var> {
        let xi = self.vector_idx(x, "index")?;
        let n = self.nodes[xi].value.len();
        if i >= n {
            return Err(Error::ShapeMismatch { op: "index", detail: format!("index {i} out of range for {n} entries") });
        }
        let v = self.nodes[xi].value[i];
        Ok(self.push(vec![v], Dims::Vector(1), Op::Index(xi, i)))
    }

    /// Row `r` of a matrix, as a vector.
    pub fn index_row(&mut self, m: Var, r: usize) -> Result<Var> {
        let mi = self.idx(m)?;
        let (rows, cols) = match self.nodes[mi].dims {
            Dims::Matrix(rows, cols) => (rows, cols),
            Dims::Vector(_) => {
                return Err(Error::ShapeMismatch { op: "index_row", detail: "expected a matrix".into() })
            }
        };
        if r >= rows {
            return Err(Error::ShapeMismatch { op: "index_row", detail: format!("row {r} out of range for {rows} rows") });
        }
        let value = self.nodes[mi].value[r * cols..(r + 1) * cols].to_vec();
        Ok(self.push(value, Dims::Vector(cols), Op::Row(mi, r)))
    }

    /// Contiguous sub-vector `x[start..start + len]`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xi = self.vector_idx(x, "slice")?;
        let n = self.nodes[xi].value.len();
        if len == 0 || start + len > n {
            return Err(Error::ShapeMismatch { op: "slice", detail: format!("[{start}, {}) out of range for {n} entries", start + len) });
        }
        let value = self.nodes[xi].value[start..start + len].to_vec();
        Ok(self.push(value, Dims::Vector(len), Op::Slice(xi, start)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let total = self.nodes[xi].value.iter().copied().sum();
        Ok(self.push(vec![total], Dims::Vector(1), Op::Sum(xi)))
    }

    /// `max(x, lo)` elementwise; entries below the floor receive no gradient.
    pub fn clamp_min(&mut self, x: Var, lo: S) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi].value.iter().map(|&v| v.max(lo)).collect();
        let dims = self.nodes[xi].dims;
        Ok(self.push(value, dims, Op::ClampMin(xi, lo)))
    }

    /// Reverse sweep from a scalar root; returns the gradient of every node.
    pub fn gradients(&self, root: Var) -> Result<Gradients<S>> {
        let grads = self.sweep(root, None)?;
        Ok(Gradients { tape: self.id, grads })
    }

    /// Accumulates `d root / d parameter` into every parameter's gradient.
    ///
    /// Unlike [`Tape::gradients`] this skips subgraphs that no parameter
    /// feeds and writes weight gradients of linear layers straight into `store`.
    pub fn backward(&self, root: Var, store: &mut ParamStore<S>) -> Result<()> {
        let grads = self.sweep(root, Some(store))?;
        for (i, node) in self.nodes.iter().enumerate().take(grads.len()) {
            if let Op::Param(id) = node.op {
                let g = &grads[i];
                if g.is_empty() {
                    continue;
                }
                add_into(&mut store.get_mut(id).grad, g);
            }
        }
        Ok(())
    }

    fn sweep(&self, root: Var, mut store: Option<&mut ParamStore<S>>) -> Result<Vec<Vec<S>>> {
        let r = self.idx(root)?;
        let len = self.nodes[r].value.len();
        if len != 1 {
            return Err(Error::NotScalar { len });
        }
        let mut grads: Vec<Vec<S>> = vec![Vec::new(); r + 1];
        if store.is_some() && !self.nodes[r].live {
            return Ok(grads);
        }
        grads[r] = vec![S::one()];
        for i in (0..=r).rev() {
            let g = std::mem::take(&mut grads[i]);
            if g.is_empty() {
                continue;
            }
            self.propagate(i, &g, &mut grads, store.as_deref_mut());
            grads[i] = g;
        }
        Ok(grads)
    }

    /// With `store` set, only live nodes receive gradients.
    fn propagate(&self, i: usize, g: &[S], grads: &mut [Vec<S>], store: Option<&mut ParamStore<S>>) {
        let pruning = store.is_some();
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { w, x, b } => {
                let wv = &self.nodes[*w].value;
                let xv = &self.nodes[*x].value;
                let n = xv.len();
                if !pruning || self.nodes[*x].live {
                    let gx = slot(grads, *x, n);
                    for (row, &gi) in wv.chunks_exact(n).zip(g) {
                        if gi == S::zero() {
                            continue;
                        }
                        for (a, &wij) in gx.iter_mut().zip(row) {
                            *a = *a + wij * gi;
                        }
                    }
                }
                let direct = match (store, &self.nodes[*w].op) {
                    (Some(store), Op::Param(id)) => Some(&mut store.get_mut(*id).grad),
                    _ => None,
                };
                if pruning && !self.nodes[*w].live {
                    // constant weight: nothing to accumulate
                } else {
                    let gw = match direct {
                        Some(acc) => acc.as_mut_slice(),
                        None => slot(grads, *w, wv.len()),
                    };
                    for (row, &gi) in gw.chunks_exact_mut(n).zip(g) {
                        if gi == S::zero() {
                            continue;
                        }
                        for (a, &xj) in row.iter_mut().zip(xv) {
                            *a = *a + gi * xj;
                        }
                    }
                }
                if let Some(b) = b {
                    add_into(slot(grads, *b, g.len()), g);
                }
            }
            Op::Tanh(x) => {
                let gx = slot(grads, *x, y.len());
                for ((a, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                    *a = *a + gi * (S::one() - yi * yi);
                }
            }
            Op::Sigmoid(x) => {
                let gx = slot(grads, *x, y.len());
                for ((a, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                    *a = *a + gi * yi * (S::one() - yi);
                }
            }
            Op::Relu(x) => {
                let xv = &self.nodes[*x].value;
                let gx = slot(grads, *x, y.len());
                for ((a, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                    if xi > S::zero() {
                        *a = *a + gi;
                    }
                }
            }
            Op::Exp(x) => {
                let gx = slot(grads, *x, y.len());
                for ((a, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                    *a = *a + gi * yi;
                }
            }
            Op::Softmax(x) => {
                let dot: S = g.iter().zip(y).map(|(&gi, &yi)| gi * yi).sum();
                let gx = slot(grads, *x, y.len());
                for ((a, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                    *a = *a + yi * (gi - dot);
                }
            }
            Op::LogSoftmax(x) => {
                let total: S = g.iter().copied().sum();
                let gx = slot(grads, *x, y.len());
                for ((a, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                    *a = *a + gi - yi.exp() * total;
                }
            }
            Op::Add(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                add_into(slot(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                let gb = slot(grads, *b, g.len());
                for (t, &gi) in gb.iter_mut().zip(g) {
                    *t = *t - gi;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let ga = slot(grads, *a, g.len());
                for ((t, &gi), &bi) in ga.iter_mut().zip(g).zip(bv) {
                    *t = *t + gi * bi;
                }
                let gb = slot(grads, *b, g.len());
                for ((t, &gi), &ai) in gb.iter_mut().zip(g).zip(av) {
                    *t = *t + gi * ai;
                }
            }
            Op::AddN(parts) => {
                for &p in parts {
                    add_into(slot(grads, p, g.len()), g);
                }
            }
            Op::AddScalar { x, s } => {
                add_into(slot(grads, *x, g.len()), g);
                let total: S = g.iter().copied().sum();
                let gs = slot(grads, *s, 1);
                gs[0] = gs[0] + total;
            }
            Op::MulScalar { x, s } => {
                let sv = self.nodes[*s].value[0];
                let xv = &self.nodes[*x].value;
                let gx = slot(grads, *x, g.len());
                for (t, &gi) in gx.iter_mut().zip(g) {
                    *t = *t + gi * sv;
                }
                let dot: S = g.iter().zip(xv).map(|(&gi, &xi)| gi * xi).sum();
                let gs = slot(grads, *s, 1);
                gs[0] = gs[0] + dot;
            }
            Op::Scale(x, c) => {
                let gx = slot(grads, *x, g.len());
                for (t, &gi) in gx.iter_mut().zip(g) {
                    *t = *t + gi * *c;
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p].value.len();
                    add_into(slot(grads, p, n), &g[offset..offset + n]);
                    offset += n;
                }
            }
            Op::Index(x, k) => {
                let n = self.nodes[*x].value.len();
                let gx = slot(grads, *x, n);
                gx[*k] = gx[*k] + g[0];
            }
            Op::Row(m, r) => {
                let n = self.nodes[*m].value.len();
                let cols = g.len();
                let gm = slot(grads, *m, n);
                add_into(&mut gm[r * cols..(r + 1) * cols], g);
            }
            Op::Slice(x, start) => {
                let n = self.nodes[*x].value.len();
                let gx = slot(grads, *x, n);
                add_into(&mut gx[*start..*start + g.len()], g);
            }
            Op::Sum(x) => {
                let n = self.nodes[*x].value.len();
                let gx = slot(grads, *x, n);
                for t in gx.iter_mut() {
                    *t = *t + g[0];
                }
            }
            Op::ClampMin(x, lo) => {
                let xv = &self.nodes[*x].value;
                let gx = slot(grads, *x, g.len());
                for ((t, &gi), &xi) in gx.iter_mut().zip(g).zip(xv) {
                    if xi > *lo {
                        *t = *t + gi;
                    }
                }
            }
        }
    }
}

fn slot<S: Scalar>(grads: &mut [Vec<S>], i: usize, len: usize) -> &mut [S] {
    if grads[i].is_empty() {
        grads[i] = vec![S::zero(); len];
    }
    &mut grads[i]
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a = *a + b;
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax_values<S: Scalar>(x: &[S]) -> Vec<S> {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let mut out: Vec<S> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: S = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v = *v / total);
    out
}

pub fn log_softmax_values<S: Scalar>(x: &[S]) -> Vec<S> {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = max + x.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
    x.iter().map(|&v| v - lse).collect()
}

/// Per-node gradients from one reverse sweep.
#[derive(Debug)]
pub struct Gradients<S> {
    tape: u64,
    grads: Vec<Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the root with respect to `v`; `None` if `v` was not reached.
    pub fn wrt(&self, v: Var) -> Result<Option<&[S]>> {
        if v.tape != self.tape {
            return Err(Error::ForeignVar);
        }
        Ok(self.grads.get(v.index).filter(|g| !g.is_empty()).map(Vec::as_slice))
    }
}
