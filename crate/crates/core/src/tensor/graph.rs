//! Tape-based reverse-mode automatic differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.

use std::collections::HashMap;

use super::kernels::{self, axis_split, broadcast_index, broadcast_shape};
use super::{check_shape, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, inv_std: Vec<S> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    BroadcastTo(Var),
    GatherRows { x: Var, rows: Vec<usize> },
    Gather { x: Var, idx: Vec<usize> },
    ScatterAdd { x: Var, idx: Vec<usize> },
    RowNormalize { x: Var, floor: S },
}

#[derive(Debug)]
struct Node<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// A recorded computation. One graph per forward pass; not shareable
/// across threads while recording.
#[derive(Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    params: Vec<(String, Var)>,
    param_lookup: HashMap<String, Var>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), params: Vec::new(), param_lookup: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<S>, op: Op<S>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { shape, data, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].data
    }

    /// Copy a node out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor<S> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node shapes are validated on creation")
    }

    /// The single element of a one-element node.
    pub fn scalar_value(&self, v: Var) -> S {
        self.nodes[v.0].data[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ---- leaves -------------------------------------------------------

    /// A constant (no gradient).
    pub fn constant(&mut self, t: &Tensor<S>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_raw(&mut self, shape: Vec<usize>, data: Vec<S>) -> Result<Var> {
        check_shape(&shape)?;
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dim("constant", format!("shape {shape:?} vs {} values", data.len())));
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, t: &Tensor<S>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Bind a named parameter. Repeated binds of the same name return the
    /// same node so its gradient is collected once.
    pub fn param(&mut self, store: &ParameterStore<S>, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_lookup.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true);
        self.params.push((name.to_string(), v));
        self.param_lookup.insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameters bound on this graph, in binding order.
    pub fn bound_params(&self) -> &[(String, Var)] {
        &self.params
    }

    /// A copy of `v` cut off from the gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (shape, data) = (n.shape.clone(), n.data.clone());
        self.push(shape, data, Op::Leaf, false)
    }

    // ---- linear algebra -------------------------------------------------

    fn mat_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    /// Matrix product `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims("matmul", a)?;
        let (k2, n) = self.mat_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner dimensions differ: {:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], data, Op::MatMul(a, b), rg))
    }

    /// Matrix product with the second operand transposed, `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims("matmul_nt", a)?;
        let (n, k2) = self.mat_dims("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::dim(
                "matmul_nt",
                format!("inner dimensions differ: {:?} x {:?}ᵀ", self.shape(a), self.shape(b)),
            ));
        }
        let mut data = vec![S::zero(); m * n];
        kernels::matmul_nt_acc(self.value(a), self.value(b), &mut data, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], data, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.mat_dims("transpose", a)?;
        let src = self.value(a);
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![c, r], data, Op::Transpose(a), rg))
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<(Vec<usize>, Vec<S>)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            let data = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
            return Ok((sa.to_vec(), data));
        }
        let out = broadcast_shape(name, sa, sb)?;
        let ia = broadcast_index(sa, &out);
        let ib = broadcast_index(sb, &out);
        let (va, vb) = (self.value(a), self.value(b));
        let data = ia.iter().zip(&ib).map(|(&i, &j)| f(va[i], vb[j])).collect();
        Ok((out, data))
    }

    /// Broadcasting sum.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, data, Op::Add(a, b), rg))
    }

    /// Broadcasting difference.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, data, Op::Sub(a, b), rg))
    }

    /// Broadcasting elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, data, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let data = self.value(a).iter().map(|&x| x * c).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(a));
        self.push(shape, data, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).iter().map(|&x| if x > S::zero() { x } else { S::zero() }).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(a));
        self.push(shape, data, Op::Relu(a), rg)
    }

    // ---- normalisers -----------------------------------------------------

    fn check_axis(&self, op: &'static str, v: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(v).len() {
            return Err(Error::dim(op, format!("axis {axis} out of range for shape {:?}", self.shape(v))));
        }
        Ok(())
    }

    fn check_finite(&self, op: &'static str, v: Var) -> Result<()> {
        if self.value(v).iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric(format!("{op}: NaN in input")));
        }
        Ok(())
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        self.check_finite("softmax", x)?;
        let shape = self.shape(x).to_vec();
        let data = softmax_along(self.value(x), &shape, axis, false);
        let rg = self.rg(x);
        Ok(self.push(shape, data, Op::Softmax { x, axis }, rg))
    }

    /// Numerically stable `log softmax` along `axis`.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        self.check_finite("log_softmax", x)?;
        let shape = self.shape(x).to_vec();
        let data = softmax_along(self.value(x), &shape, axis, true);
        let rg = self.rg(x);
        Ok(self.push(shape, data, Op::LogSoftmax { x, axis }, rg))
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&1);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim(
                "layer_norm",
                format!("input {:?} with gamma {:?} and beta {:?}", shape, self.shape(gamma), self.shape(beta)),
            ));
        }
        let rows = self.value(x).len() / d;
        let (xs, gs, bs) = (self.value(x), self.value(gamma), self.value(beta));
        let mut out = vec![S::zero(); xs.len()];
        let mut xhat = vec![S::zero(); xs.len()];
        let mut inv_std = vec![S::zero(); rows];
        let dn = S::of_usize(d);
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<S>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
            let inv = S::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = gs[j] * h + bs[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(shape, out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, rg))
    }

    /// Divide every last-axis row by its sum; rows summing to zero stay zero.
    pub fn row_normalize(&mut self, x: Var) -> Var {
        self.row_normalize_floor(x, S::zero())
    }

    /// Divide every last-axis row by `max(sum, floor)`. With a positive floor,
    /// rows of small total mass shrink instead of being scaled up to sum 1.
    pub fn row_normalize_floor(&mut self, x: Var, floor: S) -> Var {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&1);
        let mut data = self.value(x).to_vec();
        for row in data.chunks_mut(d) {
            let s: S = row.iter().copied().sum();
            let c = if s > floor { s } else { floor };
            if c == S::zero() {
                row.iter_mut().for_each(|v| *v = S::zero());
            } else {
                row.iter_mut().for_each(|v| *v /= c);
            }
        }
        let rg = self.rg(x);
        self.push(shape, data, Op::RowNormalize { x, floor }, rg)
    }

    // ---- structural -----------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        self.check_axis("concat", *first, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", format!("shape {s:?} incompatible with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let src = self.value(p);
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(shape, data, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let shape = self.shape(x).to_vec();
        if len == 0 || start + len > shape[axis] {
            return Err(Error::dim("slice", format!("range {start}..{} outside axis {axis} of {shape:?}", start + len)));
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let src = self.value(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out = shape;
        out[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(out, data, Op::Slice { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::dim("reshape", format!("{:?} -> {:?}", self.shape(x), shape)));
        }
        let data = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x), rg))
    }

    /// Explicit broadcast to a larger shape.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = broadcast_shape("broadcast_to", self.shape(x), shape)?;
        if out != shape {
            return Err(Error::dim("broadcast_to", format!("{:?} does not broadcast to {shape:?}", self.shape(x))));
        }
        let idx = broadcast_index(self.shape(x), shape);
        let src = self.value(x);
        let data = idx.iter().map(|&i| src[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(out, data, Op::BroadcastTo(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: S = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = S::of_usize(self.value(x).len());
        let s: S = self.value(x).iter().copied().sum::<S>() / n;
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::Mean(x), rg)
    }

    /// Sum along `axis`, keeping it with extent one.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum_axis", x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x);
        let mut data = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += src[(o * len + l) * inner + i];
                }
            }
        }
        let mut out = shape;
        out[axis] = 1;
        let rg = self.rg(x);
        Ok(self.push(out, data, Op::SumAxis { x, axis }, rg))
    }

    /// Mean along `axis`, keeping it with extent one.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = self.shape(x).get(axis).copied().unwrap_or(1);
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, S::one() / S::of_usize(len)))
    }

    /// Rows of a matrix (or embedding lookup), repeats allowed.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.mat_dims("gather_rows", x)?;
        if rows.is_empty() {
            return Err(Error::dim("gather_rows", "empty index list"));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::dim("gather_rows", format!("row {bad} out of range for {:?}", self.shape(x))));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![rows.len(), c], data, Op::GatherRows { x, rows: rows.to_vec() }, rg))
    }

    /// Flat elements of `x` at `idx`, as a column `[len, 1]`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        if idx.is_empty() || idx.iter().any(|&i| i >= n) {
            return Err(Error::dim("gather", format!("indices outside {} elements", n)));
        }
        let src = self.value(x);
        let data = idx.iter().map(|&i| src[i]).collect();
        let rg = self.rg(x);
        Ok(self.push(vec![idx.len(), 1], data, Op::Gather { x, idx: idx.to_vec() }, rg))
    }

    /// Place element `k` of `x` at flat position `idx[k]` of a zero tensor
    /// of `shape`, summing collisions.
    pub fn scatter_add(&mut self, x: Var, idx: &[usize], shape: &[usize]) -> Result<Var> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if idx.len() != self.value(x).len() || idx.iter().any(|&i| i >= n) {
            return Err(Error::dim("scatter_add", format!("{} indices for {} values into {shape:?}", idx.len(), self.value(x).len())));
        }
        let mut data = vec![S::zero(); n];
        for (&i, &v) in idx.iter().zip(self.value(x)) {
            data[i] += v;
        }
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), data, Op::ScatterAdd { x, idx: idx.to_vec() }, rg))
    }

    // ---- reverse sweep --------------------------------------------------

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_scaled(loss, S::one())
    }

    /// Reverse sweep seeded with `seed` instead of one (e.g. `1/batch`).
    pub fn backward_scaled(&mut self, loss: Var, seed: S) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![seed]);
        for id in (0..=loss.0).rev() {
            let Some(g) = self.grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                self.grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, contrib: Vec<S>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => buf.iter_mut().zip(contrib).for_each(|(b, x)| *b += x),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn acc_with(&mut self, v: Var, f: impl FnOnce(&mut [S])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].data.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![S::zero(); n]);
        f(slot);
    }

    /// Reduce an upstream gradient over broadcast dimensions back to the
    /// input's own shape.
    fn unbroadcast(&self, input: Var, out_shape: &[usize], g: &[S]) -> Vec<S> {
        let shape = self.shape(input);
        if shape == out_shape {
            return g.to_vec();
        }
        let idx = broadcast_index(shape, out_shape);
        let mut r = vec![S::zero(); self.value(input).len()];
        for (&i, &gv) in idx.iter().zip(g) {
            r[i] += gv;
        }
        r
    }

    fn propagate(&mut self, id: usize, g: &[S]) {
        // Temporarily take the op to release the borrow on self.nodes.
        let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        let out_shape = self.nodes[id].shape.clone();
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    let mut da = vec![S::zero(); m * k];
                    kernels::matmul_nt_acc(g, self.value(*b), &mut da, m, n, k);
                    self.acc(*a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![S::zero(); k * n];
                    kernels::matmul_tn_acc(self.value(*a), g, &mut db, k, m, n);
                    self.acc(*b, db);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                if self.rg(*a) {
                    let mut da = vec![S::zero(); m * k];
                    kernels::matmul_acc(g, self.value(*b), &mut da, m, n, k);
                    self.acc(*a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![S::zero(); n * k];
                    kernels::matmul_tn_acc(g, self.value(*a), &mut db, n, m, k);
                    self.acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    let ga = self.unbroadcast(*a, &out_shape, g);
                    self.acc(*a, ga);
                }
                if self.rg(*b) {
                    let gb = self.unbroadcast(*b, &out_shape, g);
                    self.acc(*b, gb);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    let ga = self.unbroadcast(*a, &out_shape, g);
                    self.acc(*a, ga);
                }
                if self.rg(*b) {
                    let neg: Vec<S> = g.iter().map(|&x| -x).collect();
                    let gb = self.unbroadcast(*b, &out_shape, &neg);
                    self.acc(*b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                let ia = broadcast_index(&sa, &out_shape);
                let ib = broadcast_index(&sb, &out_shape);
                if self.rg(*a) {
                    let vb = self.value(*b);
                    let mut ga = vec![S::zero(); self.value(*a).len()];
                    for k in 0..g.len() {
                        ga[ia[k]] += g[k] * vb[ib[k]];
                    }
                    self.acc(*a, ga);
                }
                if self.rg(*b) {
                    let va = self.value(*a);
                    let mut gb = vec![S::zero(); self.value(*b).len()];
                    for k in 0..g.len() {
                        gb[ib[k]] += g[k] * va[ia[k]];
                    }
                    self.acc(*b, gb);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.acc(*a, g.iter().map(|&x| x * c).collect());
            }
            Op::Relu(a) => {
                let da = self.value(*a).iter().zip(g).map(|(&x, &gv)| if x > S::zero() { gv } else { S::zero() }).collect();
                self.acc(*a, da);
            }
            Op::Softmax { x, axis } => {
                let y = &self.nodes[id].data;
                let (outer, len, inner) = axis_split(&out_shape, *axis);
                let mut dx = vec![S::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: S = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            dx[at(l)] = y[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
                self.acc(*x, dx);
            }
            Op::LogSoftmax { x, axis } => {
                let y = &self.nodes[id].data;
                let (outer, len, inner) = axis_split(&out_shape, *axis);
                let mut dx = vec![S::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let total: S = (0..len).map(|l| g[at(l)]).sum();
                        for l in 0..len {
                            dx[at(l)] = g[at(l)] - y[at(l)].exp() * total;
                        }
                    }
                }
                self.acc(*x, dx);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = *out_shape.last().unwrap_or(&1);
                let rows = inv_std.len();
                let gs = self.value(*gamma).to_vec();
                if self.rg(*gamma) {
                    self.acc_with(*gamma, |dg| {
                        for r in 0..rows {
                            for j in 0..d {
                                dg[j] += g[r * d + j] * xhat[r * d + j];
                            }
                        }
                    });
                }
                if self.rg(*beta) {
                    self.acc_with(*beta, |db| {
                        for r in 0..rows {
                            for j in 0..d {
                                db[j] += g[r * d + j];
                            }
                        }
                    });
                }
                if self.rg(*x) {
                    let dn = S::of_usize(d);
                    let mut dx = vec![S::zero(); g.len()];
                    for r in 0..rows {
                        let mut s1 = S::zero();
                        let mut s2 = S::zero();
                        for j in 0..d {
                            let dh = g[r * d + j] * gs[j];
                            s1 += dh;
                            s2 += dh * xhat[r * d + j];
                        }
                        for j in 0..d {
                            let dh = g[r * d + j] * gs[j];
                            dx[r * d + j] = inv_std[r] / dn * (dn * dh - s1 - xhat[r * d + j] * s2);
                        }
                    }
                    self.acc(*x, dx);
                }
            }
            Op::RowNormalize { x, floor } => {
                let d = *out_shape.last().unwrap_or(&1);
                let xs = self.value(*x);
                let y = &self.nodes[id].data;
                let mut dx = vec![S::zero(); xs.len()];
                for (r, row) in xs.chunks(d).enumerate() {
                    let s: S = row.iter().copied().sum();
                    if s > *floor {
                        let dot: S = (0..d).map(|j| g[r * d + j] * y[r * d + j]).sum();
                        for j in 0..d {
                            dx[r * d + j] = (g[r * d + j] - dot) / s;
                        }
                    } else if *floor > S::zero() {
                        for j in 0..d {
                            dx[r * d + j] = g[r * d + j] / *floor;
                        }
                    }
                }
                self.acc(*x, dx);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(&out_shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            dp.extend_from_slice(&g[base..base + len * inner]);
                        }
                        self.acc(p, dp);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, len, inner) = axis_split(&out_shape, *axis);
                let full = self.shape(*x)[*axis];
                let start = *start;
                self.acc_with(*x, |dx| {
                    for o in 0..outer {
                        let base = (o * full + start) * inner;
                        for k in 0..len * inner {
                            dx[base + k] += g[o * len * inner + k];
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let mut da = vec![S::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[j * r + i];
                    }
                }
                self.acc(*a, da);
            }
            Op::Reshape(a) => self.acc(*a, g.to_vec()),
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.acc(*a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.acc(*a, vec![g[0] / S::of_usize(n); n]);
            }
            Op::SumAxis { x, axis } => {
                let shape = self.shape(*x).to_vec();
                let (outer, len, inner) = axis_split(&shape, *axis);
                let mut dx = vec![S::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            dx[(o * len + l) * inner + i] = g[o * inner + i];
                        }
                    }
                }
                self.acc(*x, dx);
            }
            Op::BroadcastTo(a) => {
                let ga = self.unbroadcast(*a, &out_shape, g);
                self.acc(*a, ga);
            }
            Op::GatherRows { x, rows } => {
                let c = self.shape(*x)[1];
                self.acc_with(*x, |dx| {
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            dx[r * c + j] += g[k * c + j];
                        }
                    }
                });
            }
            Op::Gather { x, idx } => {
                self.acc_with(*x, |dx| {
                    for (k, &i) in idx.iter().enumerate() {
                        dx[i] += g[k];
                    }
                });
            }
            Op::ScatterAdd { x, idx } => {
                let dx = idx.iter().map(|&i| g[i]).collect();
                self.acc(*x, dx);
            }
        }
        self.nodes[id].op = op;
    }
}

fn softmax_along<S: Scalar>(x: &[S], shape: &[usize], axis: usize, log: bool) -> Vec<S> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![S::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let mut max = S::neg_infinity();
            for l in 0..len {
                if x[at(l)] > max {
                    max = x[at(l)];
                }
            }
            let mut total = S::zero();
            for l in 0..len {
                let e = (x[at(l)] - max).exp();
                out[at(l)] = e;
                total += e;
            }
            if log {
                let lse = total.ln();
                for l in 0..len {
                    out[at(l)] = x[at(l)] - max - lse;
                }
            } else {
                for l in 0..len {
                    out[at(l)] /= total;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_projection() {
        let mut g = Graph::new();
        let i2 = g.constant(&Tensor::identity(2));
        let m = g.constant(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(p), &[1.0, 2.0, 3.0, 4.0]);

        let e = g.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]));
        let v = g.constant(&t(&[2, 1], &[5.0, 7.0]));
        let q = g.matmul(e, v).unwrap();
        assert_eq!(g.value(q), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(&Tensor::zeros(&[2, 3]));
        let b = g.constant(&Tensor::zeros(&[2, 3]));
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_basic_cases() {
        let mut g = Graph::new();
        let z = g.constant(&t(&[4], &[0.0; 4]));
        let s = g.softmax(z, 0).unwrap();
        assert_eq!(g.value(s), &[0.25; 4]);

        let big = g.constant(&t(&[2], &[1000.0, 0.0]));
        let s = g.softmax(big, 0).unwrap();
        assert!((g.value(s)[0] - 1.0).abs() < 1e-12);
        assert!(g.value(s)[1].abs() < 1e-12);

        let nan = g.constant(&t(&[2], &[f64::NAN, 0.0]));
        assert!(matches!(g.softmax(nan, 0), Err(Error::Numeric(_))));
        assert!(g.softmax(z, 1).is_err());
    }

    #[test]
    fn relu_concat_slice() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r), &[0.0, 0.0, 2.0]);

        let a = g.constant(&t(&[1, 1], &[1.0]));
        let b = g.constant(&t(&[1, 1], &[2.0]));
        let c = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.shape(c), &[2, 1]);
        assert_eq!(g.value(c), &[1.0, 2.0]);
    }

    #[test]
    fn broadcast_mismatch_is_a_dimension_error() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(&Tensor::zeros(&[4, 3]));
        let b = g.constant(&Tensor::zeros(&[4]));
        assert!(matches!(g.add(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::new();
        let x = g.variable(&t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::new();
        let x = g.variable(&t(&[1], &[3.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(&Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn row_normalize_leaves_empty_rows_at_zero() {
        let mut g = Graph::new();
        let x = g.variable(&t(&[2, 2], &[1.0, 3.0, 0.0, 0.0]));
        let y = g.row_normalize(x);
        assert_eq!(g.value(y), &[0.25, 0.75, 0.0, 0.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn floored_rows_shrink_below_the_floor() {
        let mut g = Graph::new();
        let x = g.variable(&t(&[2, 2], &[0.25, 0.25, 1.0, 3.0]));
        let y = g.row_normalize_floor(x, 1.0);
        assert_eq!(g.value(y), &[0.25, 0.25, 0.25, 0.75]);
        let w = g.constant(&t(&[2, 2], &[1.0, 0.0, 1.0, 0.0]));
        let p = g.mul(y, w).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        let grad = g.grad(x).unwrap();
        assert_eq!(&grad[..2], &[1.0, 0.0]);
        assert!((grad[2] - 0.75 / 4.0).abs() < 1e-15 && (grad[3] + 0.25 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.variable(&t(&[2], &[1.0, 2.0]));
        let d = g.detach(x);
        let y = g.mul(x, d).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 2.0]);
    }
}
