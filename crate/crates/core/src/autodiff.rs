//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. Nodes are appended
//! in evaluation order, so the node list is already a topological order and
//! [`Graph::backward`] is a single reverse sweep that visits each node once.
//! Broadcasting is limited to scalars and to the explicit row-vector ops
//! [`Graph::add_row`] / [`Graph::mul_row`].

use crate::error::{Error, Result};
use crate::tensor::{matmul_at_into, matmul_bt_into, matmul_into, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    AddRow(Var, Var),
    MulRow(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Softplus(Var),
    SoftmaxLast(Var),
    NormalizeLast { x: Var, inv_std: Vec<f64> },
    Sum(Var),
    Mean(Var),
    Max { x: Var, argmax: usize },
    ConcatLast(Vec<Var>),
    SliceLast { x: Var, start: usize },
    Gather { x: Var, indices: Vec<usize> },
    GatherRows { table: Var, rows: Vec<usize> },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `var`; exactly zero when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = &self.shapes[var.0];
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn get_slice(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn elementwise2(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, op, ng))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise2("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise2("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise2("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// Batched product of `[n×r×s]` with `[n×s×t]`, or with `[n×t×s]` transposed
    /// when `transpose_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 3 || tb.ndim() != 3 || ta.shape()[0] != tb.shape()[0] {
            return Err(dim_err("bmm", ta, tb));
        }
        let (n, r, s) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let (inner, t) = if transpose_b {
            (tb.shape()[2], tb.shape()[1])
        } else {
            (tb.shape()[1], tb.shape()[2])
        };
        if inner != s {
            return Err(dim_err("bmm", ta, tb));
        }
        let mut out = vec![0.0; n * r * t];
        for i in 0..n {
            let ab = &ta.data()[i * r * s..(i + 1) * r * s];
            let bb = &tb.data()[i * s * t..(i + 1) * s * t];
            let ob = &mut out[i * r * t..(i + 1) * r * t];
            if transpose_b {
                matmul_bt_into(ab, bb, ob, r, s, t);
            } else {
                matmul_into(ab, bb, ob, r, s, t);
            }
        }
        let value = Tensor::new(vec![n, r, t], out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::BatchMatMul { a, b, transpose_b }, ng))
    }

    fn row_op(
        &mut self,
        name: &'static str,
        x: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let c = tx.last_dim();
        if tr.len() != c || tx.ndim() == 0 {
            return Err(dim_err(name, tx, tr));
        }
        let r = tr.data();
        let data = tx
            .data()
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&a, &b)| f(a, b)))
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(value, op, ng))
    }

    /// Adds a `[c]` vector to every slice along the last axis.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.row_op("add_row", x, bias, |a, b| a + b, Op::AddRow(x, bias))
    }

    /// Multiplies every slice along the last axis by a `[c]` vector.
    pub fn mul_row(&mut self, x: Var, scale: Var) -> Result<Var> {
        self.row_op("mul_row", x, scale, |a, b| a * b, Op::MulRow(x, scale))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    /// Softmax over the last axis, stabilised by subtracting each slice's max.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.last_dim();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(value, Op::SoftmaxLast(x), ng)
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        if self.value(x).ndim() != 2 {
            return Err(Error::Contract(format!(
                "softmax_rows expects a matrix, got {:?}",
                self.shape(x)
            )));
        }
        Ok(self.softmax_last(x))
    }

    /// Zero-mean, unit-variance normalisation of each last-axis slice,
    /// `(x - mean) / sqrt(var + eps)` with the population variance.
    pub fn normalize_last(&mut self, x: Var, eps: f64) -> Var {
        let t = self.value(x);
        let c = t.last_dim();
        let mut data = t.data().to_vec();
        let mut inv_std = Vec::with_capacity(data.len() / c.max(1));
        for row in data.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(value, Op::NormalizeLast { x, inv_std }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), ng))
    }

    /// Maximum element; the gradient goes to the first maximal entry.
    pub fn max(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::Contract("max of an empty tensor".into()));
        }
        let mut argmax = 0;
        for (i, &v) in t.data().iter().enumerate() {
            if v > t.data()[argmax] {
                argmax = i;
            }
        }
        let value = Tensor::scalar(t.data()[argmax]);
        let ng = self.ng(x);
        Ok(self.push(value, Op::Max { x, argmax }, ng))
    }

    /// Concatenates along the last axis; leading extents must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let lead: Vec<usize> = {
            let s = self.shape(first);
            s[..s.len().saturating_sub(1)].to_vec()
        };
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let s = t.shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(dim_err("concat_last", self.value(first), t));
            }
            widths.push(t.last_dim());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(value, Op::ConcatLast(parts.to_vec()), ng))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let c = t.last_dim();
        if t.ndim() == 0 || start + len > c {
            return Err(Error::Bounds {
                what: format!("last axis of {:?}", t.shape()),
                index: start + len,
                len: c,
            });
        }
        let data = t
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, data)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::SliceLast { x, start }, ng))
    }

    /// Selects flat elements by index into a 1-D result.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let mut data = Vec::with_capacity(indices.len());
        for &i in indices {
            let v = *t.data().get(i).ok_or_else(|| Error::Bounds {
                what: "gather source".into(),
                index: i,
                len: t.len(),
            })?;
            data.push(v);
        }
        let value = Tensor::vector(data);
        let ng = self.ng(x);
        Ok(self.push(
            value,
            Op::Gather {
                x,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    /// Rows of a `[r×c]` table, in the given order (repeats allowed).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.ndim() != 2 {
            return Err(Error::Contract(format!(
                "gather_rows expects a matrix, got {:?}",
                t.shape()
            )));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(Error::Bounds {
                    what: "embedding table".into(),
                    index: i,
                    len: r,
                });
            }
            data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(vec![rows.len(), c], data)?;
        let ng = self.ng(table);
        Ok(self.push(
            value,
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.needs_grad {
                grads[idx] = None;
            }
        }
        Ok(Gradients {
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
            grads,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_assign(s, g));
                acc(*b, &mut |s| add_assign(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_assign(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(s, &g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * va[i];
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |s| {
                s.iter_mut().zip(g).for_each(|(s, &g)| *s += g * c)
            }),
            Op::AddScalar(x) => acc(*x, &mut |s| add_assign(s, g)),
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (r, k, t) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |s| matmul_bt_into(g, tb.data(), s, r, t, k));
                acc(*b, &mut |s| matmul_at_into(ta.data(), g, s, k, r, t));
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (n, r, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let t = node.value.shape()[2];
                let (asz, bsz, gsz) = (r * k, k * t, r * t);
                acc(*a, &mut |s| {
                    for i in 0..n {
                        let gb = &g[i * gsz..(i + 1) * gsz];
                        let bb = &tb.data()[i * bsz..(i + 1) * bsz];
                        let sb = &mut s[i * asz..(i + 1) * asz];
                        if *transpose_b {
                            // C = A·Bᵀ with B [t×k]: dA = G·B
                            matmul_into(gb, bb, sb, r, t, k);
                        } else {
                            matmul_bt_into(gb, bb, sb, r, t, k);
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..n {
                        let gb = &g[i * gsz..(i + 1) * gsz];
                        let ab = &ta.data()[i * asz..(i + 1) * asz];
                        let sb = &mut s[i * bsz..(i + 1) * bsz];
                        if *transpose_b {
                            // dB = Gᵀ·A, [t×k]
                            matmul_at_into(gb, ab, sb, t, r, k);
                        } else {
                            matmul_at_into(ab, gb, sb, k, r, t);
                        }
                    }
                });
            }
            Op::AddRow(x, bias) => {
                acc(*x, &mut |s| add_assign(s, g));
                let c = self.nodes[bias.0].value.len();
                acc(*bias, &mut |s| {
                    for chunk in g.chunks(c) {
                        add_assign(s, chunk);
                    }
                });
            }
            Op::MulRow(x, scale) => {
                let (vx, vs) = (val(*x), val(*scale));
                let c = vs.len();
                acc(*x, &mut |s| {
                    for (i, si) in s.iter_mut().enumerate() {
                        *si += g[i] * vs[i % c];
                    }
                });
                acc(*scale, &mut |s| {
                    for (i, (&gi, &xi)) in g.iter().zip(vx).enumerate() {
                        s[i % c] += gi * xi;
                    }
                });
            }
            Op::Relu(x) => {
                let vx = val(*x);
                acc(*x, &mut |s| {
                    for i in 0..s.len() {
                        if vx[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let out = node.value.data();
                acc(*x, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                });
            }
            Op::Log(x) => {
                let vx = val(*x);
                acc(*x, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] / vx[i];
                    }
                });
            }
            Op::Exp(x) => {
                let out = node.value.data();
                acc(*x, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * out[i];
                    }
                });
            }
            Op::Softplus(x) => {
                let vx = val(*x);
                acc(*x, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * sigmoid(vx[i]);
                    }
                });
            }
            Op::SoftmaxLast(x) => {
                let out = node.value.data();
                let c = node.value.last_dim();
                acc(*x, &mut |s| {
                    for ((sr, yr), gr) in s.chunks_mut(c).zip(out.chunks(c)).zip(g.chunks(c)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..c {
                            sr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::NormalizeLast { x, inv_std } => {
                let out = node.value.data();
                let c = node.value.last_dim();
                let n = c as f64;
                acc(*x, &mut |s| {
                    for (r, ((sr, yr), gr)) in s
                        .chunks_mut(c)
                        .zip(out.chunks(c))
                        .zip(g.chunks(c))
                        .enumerate()
                    {
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gy_mean = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / n;
                        for j in 0..c {
                            sr[j] += inv_std[r] * (gr[j] - g_mean - yr[j] * gy_mean);
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let scale = g[0] / self.nodes[x.0].value.len() as f64;
                acc(*x, &mut |s| s.iter_mut().for_each(|v| *v += scale));
            }
            Op::Max { x, argmax } => acc(*x, &mut |s| s[*argmax] += g[0]),
            Op::ConcatLast(parts) => {
                let total = node.value.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.last_dim();
                    acc(p, &mut |s| {
                        for (sr, gr) in s.chunks_mut(w).zip(g.chunks(total)) {
                            add_assign(sr, &gr[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceLast { x, start } => {
                let c = self.nodes[x.0].value.last_dim();
                let w = node.value.last_dim();
                acc(*x, &mut |s| {
                    for (sr, gr) in s.chunks_mut(c).zip(g.chunks(w)) {
                        add_assign(&mut sr[*start..start + w], gr);
                    }
                });
            }
            Op::Gather { x, indices } => acc(*x, &mut |s| {
                for (&i, &gi) in indices.iter().zip(g) {
                    s[i] += gi;
                }
            }),
            Op::GatherRows { table, rows } => {
                let c = node.value.last_dim();
                acc(*table, &mut |s| {
                    for (&r, gr) in rows.iter().zip(g.chunks(c)) {
                        add_assign(&mut s[r * c..(r + 1) * c], gr);
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |s| add_assign(s, g)),
        }
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numerical_gradient(x: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * step);
    }
    out
}

/// Largest relative error between two gradients, with an absolute floor so
/// that entries near zero compare absolutely.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
