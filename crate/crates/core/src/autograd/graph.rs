//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in creation order,
//! which is already a topological order; [`Graph::backward`] walks the tape in
//! reverse. Graphs are built per forward pass and dropped afterwards.

use super::gemm::gemm;
use super::param::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Minimum(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    Mean { x: Var, axis: usize },
    MeanAll(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Embedding { table: Var, indices: Vec<usize> },
    Gather { x: Var, indices: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of the graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// `(param slot, gradient)` for every parameter the loss depends on.
    pub fn params(&self) -> impl Iterator<Item = (usize, &Tensor)> + '_ {
        self.params.iter().filter_map(|&(slot, node)| self.grads[node].as_ref().map(|g| (slot, g)))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shapes checked by caller")
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::Graph(format!("{op}: axis {axis} out of range for shape {:?}", t.shape())));
    }
    Ok(())
}

fn remove_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant or an input we may want the gradient of.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Leaf holding a copy of parameter `slot`; its gradient is reported by
    /// [`Gradients::params`].
    pub fn param(&mut self, params: &ParamSet, slot: usize) -> Var {
        self.push(params.value(slot).clone(), Op::Param(slot))
    }

    /// `a (m x k) * b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a (m x k) * b^T` with `b` stored as `n x k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let mismatch = || Error::Shape {
            op: if trans_b { "matmul_t" } else { "matmul" },
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        };
        if ta.rank() != 2 || tb.rank() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (kb, n) = if trans_b { (tb.shape()[1], tb.shape()[0]) } else { (tb.shape()[0], tb.shape()[1]) };
        if k != kb {
            return Err(mismatch());
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), trans_b, 0.0, &mut out);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::MatMul { a, b, trans_b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let v = zip_map(ta, tb, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds vector `b` to every row (last axis) of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let cols = *tx.shape().last().unwrap_or(&0);
        if tb.rank() != 1 || tb.len() != cols || tx.rank() == 0 {
            return Err(Error::Shape { op: "add_row", lhs: tx.shape().to_vec(), rhs: tb.shape().to_vec() });
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(cols) {
            for (v, &bias) in row.iter_mut().zip(tb.data()) {
                *v += bias;
            }
        }
        let v = Tensor::new(tx.shape(), data)?;
        Ok(self.push(v, Op::AddRow(x, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let v = zip_map(ta, tb, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let v = zip_map(ta, tb, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x).map(|e| scale * e + shift);
        self.push(v, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("minimum", ta, tb)?;
        let v = zip_map(ta, tb, f64::min);
        Ok(self.push(v, Op::Minimum(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        self.push(v, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e * e);
        self.push(v, Op::Square(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis("softmax", t, axis)?;
        let v = softmax_along(t, axis, false);
        Ok(self.push(v, Op::Softmax { x, axis }))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis("log_softmax", t, axis)?;
        let v = softmax_along(t, axis, true);
        Ok(self.push(v, Op::LogSoftmax { x, axis }))
    }

    /// Mean over `axis`, which is removed from the shape. Accumulates in
    /// index order, then divides.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis("mean", t, axis)?;
        let (outer, len, inner) = Tensor::split_axis(t.shape(), axis);
        if len == 0 {
            return Err(Error::Graph("mean over an empty axis".into()));
        }
        let src = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for a in 0..len {
                let base = (o * len + a) * inner;
                for (d, s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
            dst.iter_mut().for_each(|d| *d /= len as f64);
        }
        let v = Tensor::new(&remove_axis(t.shape(), axis), out)?;
        Ok(self.push(v, Op::Mean { x, axis }))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::Graph("mean of an empty tensor".into()));
        }
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        Ok(self.push(v, Op::MeanAll(x)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Graph("concat of zero tensors".into()))?;
        let base = self.value(*first).shape().to_vec();
        check_axis("concat", self.value(*first), axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape { op: "concat", lhs: base, rhs: s.to_vec() });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = Tensor::split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::Concat { parts: parts.to_vec(), axis }))
    }

    /// Slice `start..start + len` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        check_axis("narrow", t, axis)?;
        if start + len > t.shape()[axis] {
            return Err(Error::Graph(format!(
                "narrow {start}..{} out of range for axis {axis} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let (outer, full, inner) = Tensor::split_axis(t.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let v = Tensor::new(&shape, out)?;
        Ok(self.push(v, Op::Narrow { x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Rows of `table` (`V x E`) selected by `indices`, giving `len x E`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::Shape { op: "embedding", lhs: t.shape().to_vec(), rhs: vec![indices.len()] });
        }
        let (rows, dim) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            if i >= rows {
                return Err(Error::Graph(format!("embedding index {i} out of range for {rows} rows")));
            }
            out.extend_from_slice(&t.data()[i * dim..(i + 1) * dim]);
        }
        let v = Tensor::matrix(indices.len(), dim, out)?;
        Ok(self.push(v, Op::Embedding { table, indices: indices.to_vec() }))
    }

    /// `out[b] = x[b, indices[b]]` for `x` of shape `B x K`.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || t.shape()[0] != indices.len() {
            return Err(Error::Shape { op: "gather", lhs: t.shape().to_vec(), rhs: vec![indices.len()] });
        }
        let k = t.shape()[1];
        let mut out = Vec::with_capacity(indices.len());
        for (b, &i) in indices.iter().enumerate() {
            if i >= k {
                return Err(Error::Graph(format!("gather index {i} out of range for {k} columns")));
            }
            out.push(t.data()[b * k + i]);
        }
        let v = Tensor::vector(out);
        Ok(self.push(v, Op::Gather { x, indices: indices.to_vec() }))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Graph(format!("backward needs a scalar loss, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(slot) => Some((slot, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    /// Runs [`backward`](Self::backward) and adds the parameter gradients
    /// into `params`.
    pub fn backward_into(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        let grads = self.backward(loss)?;
        params.accumulate(&grads);
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = out.shape()[1];
                let mut da = vec![0.0; m * k];
                // dA = dC * op(B)^T
                gemm(m, n, k, g.data(), false, tb.data(), !trans_b, 0.0, &mut da);
                acc(*a, Tensor::new(ta.shape(), da).unwrap());
                let mut db = vec![0.0; k * n];
                if *trans_b {
                    // B is n x k: dB = dC^T * A
                    gemm(n, m, k, g.data(), true, ta.data(), false, 0.0, &mut db);
                } else {
                    gemm(k, m, n, ta.data(), true, g.data(), false, 0.0, &mut db);
                }
                acc(*b, Tensor::new(tb.shape(), db).unwrap());
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                let cols = self.value(*b).len();
                let mut db = vec![0.0; cols];
                for row in g.data().chunks_exact(cols) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                acc(*b, Tensor::vector(db));
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, zip_map(g, tb, |d, y| d * y));
                acc(*b, zip_map(g, ta, |d, x| d * x));
            }
            Op::Affine { x, scale } => acc(*x, g.map(|v| v * scale)),
            Op::Minimum(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let mut da = g.clone();
                let mut db = g.clone();
                for i in 0..g.len() {
                    if ta.data()[i] <= tb.data()[i] {
                        db.data_mut()[i] = 0.0;
                    } else {
                        da.data_mut()[i] = 0.0;
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                acc(*x, zip_map(g, tx, |d, v| if v > 0.0 { d } else { 0.0 }));
            }
            Op::Tanh(x) => acc(*x, zip_map(g, out, |d, y| d * (1.0 - y * y))),
            Op::Sigmoid(x) => acc(*x, zip_map(g, out, |d, y| d * y * (1.0 - y))),
            Op::Exp(x) => acc(*x, zip_map(g, out, |d, y| d * y)),
            Op::Square(x) => {
                let tx = self.value(*x);
                acc(*x, zip_map(g, tx, |d, v| 2.0 * d * v));
            }
            Op::Softmax { x, axis } => {
                // dx = y * (dy - sum(dy * y))
                let (outer, len, inner) = Tensor::split_axis(out.shape(), *axis);
                let mut dx = vec![0.0; out.len()];
                let (y, dy) = (out.data(), g.data());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * len + a) * inner + i;
                        let dot: f64 = (0..len).map(|a| dy[at(a)] * y[at(a)]).sum();
                        for a in 0..len {
                            dx[at(a)] = y[at(a)] * (dy[at(a)] - dot);
                        }
                    }
                }
                acc(*x, Tensor::new(out.shape(), dx).unwrap());
            }
            Op::LogSoftmax { x, axis } => {
                // dx = dy - softmax * sum(dy)
                let (outer, len, inner) = Tensor::split_axis(out.shape(), *axis);
                let mut dx = vec![0.0; out.len()];
                let (y, dy) = (out.data(), g.data());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * len + a) * inner + i;
                        let total: f64 = (0..len).map(|a| dy[at(a)]).sum();
                        for a in 0..len {
                            dx[at(a)] = dy[at(a)] - y[at(a)].exp() * total;
                        }
                    }
                }
                acc(*x, Tensor::new(out.shape(), dx).unwrap());
            }
            Op::Mean { x, axis } => {
                let tx = self.value(*x);
                let (outer, len, inner) = Tensor::split_axis(tx.shape(), *axis);
                let mut dx = vec![0.0; tx.len()];
                let scale = 1.0 / len as f64;
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        for (d, s) in dx[base..base + inner].iter_mut().zip(src) {
                            *d = s * scale;
                        }
                    }
                }
                acc(*x, Tensor::new(tx.shape(), dx).unwrap());
            }
            Op::MeanAll(x) => {
                let tx = self.value(*x);
                let v = g.data()[0] / tx.len() as f64;
                acc(*x, Tensor::full(tx.shape(), v));
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = Tensor::split_axis(out.shape(), *axis);
                let widths: Vec<usize> =
                    parts.iter().map(|p| self.value(*p).shape()[*axis] * inner).collect();
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (p, w) in parts.iter().zip(&widths) {
                    let mut d = Vec::with_capacity(outer * w);
                    for o in 0..outer {
                        let base = o * total + offset;
                        d.extend_from_slice(&g.data()[base..base + w]);
                    }
                    offset += w;
                    acc(*p, Tensor::new(self.value(*p).shape(), d).unwrap());
                }
            }
            Op::Narrow { x, axis, start } => {
                let tx = self.value(*x);
                let (outer, full, inner) = Tensor::split_axis(tx.shape(), *axis);
                let len = out.shape()[*axis];
                let mut dx = vec![0.0; tx.len()];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                acc(*x, Tensor::new(tx.shape(), dx).unwrap());
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(*x, g.clone().reshaped(&shape).unwrap());
            }
            Op::Embedding { table, indices } => {
                let tt = self.value(*table);
                let dim = tt.shape()[1];
                let mut dt = Tensor::zeros(tt.shape());
                for (r, &i) in indices.iter().enumerate() {
                    let src = &g.data()[r * dim..(r + 1) * dim];
                    for (d, s) in dt.data_mut()[i * dim..(i + 1) * dim].iter_mut().zip(src) {
                        *d += s;
                    }
                }
                acc(*table, dt);
            }
            Op::Gather { x, indices } => {
                let tx = self.value(*x);
                let k = tx.shape()[1];
                let mut dx = Tensor::zeros(tx.shape());
                for (b, &i) in indices.iter().enumerate() {
                    dx.data_mut()[b * k + i] += g.data()[b];
                }
                acc(*x, dx);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax (or log-softmax) along `axis`.
pub(crate) fn softmax_along(t: &Tensor, axis: usize, log: bool) -> Tensor {
    let (outer, len, inner) = Tensor::split_axis(t.shape(), axis);
    let src = t.data();
    let mut out = vec![0.0; t.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * len + a) * inner + i;
            let max = (0..len).map(|a| src[at(a)]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..len).map(|a| (src[at(a)] - max).exp()).sum();
            for a in 0..len {
                let z = src[at(a)] - max;
                out[at(a)] = if log { z - sum.ln() } else { z.exp() / sum };
            }
        }
    }
    Tensor::new(t.shape(), out).expect("same shape")
}
