//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation in creation order, so node indices
//! are already a topological order and backward is a single reverse sweep.
//! Leaves created with `requires_grad` own a gradient accumulator that
//! persists across backward calls until [`Graph::zero_grad`].
//!
//! [`Graph::backward_to`] restricts a pass to a chosen subset of leaves; the
//! alternating trainer uses it to scope the discriminator step and the main
//! step without rebuilding the forward pass.

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, Tensor};

/// Handle to a node of one [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    MeanAxis(Var, usize),
    Sum(Var),
    Transpose(Var),
    Trace(Var),
    SqDists(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MulRow(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::SliceCols(a, _, _)
            | Op::SliceRows(a, _, _)
            | Op::MeanAxis(a, _)
            | Op::Sum(a)
            | Op::Transpose(a)
            | Op::Trace(a)
            | Op::SqDists(a) => vec![*a],
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Persistent accumulator; present iff this is a leaf with `requires_grad`.
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn is_matrix(t: &Tensor) -> bool {
    t.shape().len() == 2
}

/// Accepts `[D]` or `[1, D]` as a row vector of width `D`.
fn is_row_of(v: &Tensor, width: usize) -> bool {
    match v.shape() {
        [d] => *d == width,
        [1, d] => *d == width,
        _ => false,
    }
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

    /// Adds an input tensor. Non-finite values are rejected.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        let grad = requires_grad.then(|| Tensor::zeros(value.shape()));
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a `requires_grad` leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.data_mut().fill(0.0);
            }
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ----- primitives -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !is_matrix(av) || !is_matrix(bv) || av.cols() != bv.rows() {
            return Err(mismatch("matmul", av, bv));
        }
        let out = av.matmul(bv)?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: fn(f64, f64) -> f64) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(name, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn row_broadcast(&mut self, name: &'static str, x: Var, v: Var, op: Op, f: fn(f64, f64) -> f64) -> Result<Var> {
        let (xv, vv) = (self.value(x), self.value(v));
        if !is_matrix(xv) || !is_row_of(vv, xv.cols()) {
            return Err(mismatch(name, xv, vv));
        }
        let cols = xv.cols();
        let row = vv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &e)| f(e, row[i % cols]))
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(name, out, op)
    }

    /// `x[t, d] + v[d]`: a length-`D` vector broadcast over the time axis.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        self.row_broadcast("add_row", x, v, Op::AddRow(x, v), |a, b| a + b)
    }

    /// `x[t, d] · v[d]`: a length-`D` vector broadcast over the time axis.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Result<Var> {
        self.row_broadcast("mul_row", x, v, Op::MulRow(x, v), |a, b| a * b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push("scale", out, Op::Scale(x, factor))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        self.push("tanh", out, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::exp);
        self.push("exp", out, Op::Exp(x))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if !is_matrix(xv) {
            return Err(mismatch("softmax", xv, xv));
        }
        let mut out = xv.clone();
        let cols = out.cols();
        for row in out.data_mut().chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push("softmax", out, Op::Softmax(x))
    }

    /// Row-wise log-softmax of a matrix.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if !is_matrix(xv) {
            return Err(mismatch("log_softmax", xv, xv));
        }
        let mut out = xv.clone();
        let cols = out.cols();
        for row in out.data_mut().chunks_mut(cols) {
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push("log_softmax", out, Op::LogSoftmax(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(
            *parts
                .first()
                .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?,
        );
        let rows = first.rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p);
            if !is_matrix(pv) || pv.rows() != rows {
                return Err(mismatch("concat_cols", first, pv));
            }
            widths.push(pv.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::matrix(rows, total, data);
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(
            *parts
                .first()
                .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?,
        );
        let cols = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if !is_matrix(pv) || pv.cols() != cols {
                return Err(mismatch("concat_rows", first, pv));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::matrix(rows, cols, data);
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if !is_matrix(xv) || start >= end || end > xv.cols() {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let mut data = Vec::with_capacity(xv.rows() * (end - start));
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.row_slice(r)[start..end]);
        }
        let out = Tensor::matrix(xv.rows(), end - start, data);
        self.push("slice_cols", out, Op::SliceCols(x, start, end))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if !is_matrix(xv) || start >= end || end > xv.rows() {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let out = xv.slice_rows(start, end);
        self.push("slice_rows", out, Op::SliceRows(x, start, end))
    }

    /// Mean over `axis` of a matrix, keeping it two-dimensional:
    /// axis 0 gives `1 × D`, axis 1 gives `T × 1`.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if !is_matrix(xv) || axis > 1 {
            return Err(Error::ShapeMismatch {
                op: "mean_axis",
                lhs: xv.shape().to_vec(),
                rhs: vec![axis],
            });
        }
        let (r, c) = (xv.rows(), xv.cols());
        let out = if axis == 0 {
            let mut acc = vec![0.0; c];
            for row in xv.data().chunks(c) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= r as f64);
            Tensor::matrix(1, c, acc)
        } else {
            let acc = xv
                .data()
                .chunks(c)
                .map(|row| row.iter().sum::<f64>() / c as f64)
                .collect();
            Tensor::matrix(r, 1, acc)
        };
        self.push("mean_axis", out, Op::MeanAxis(x, axis))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if !is_matrix(xv) {
            return Err(mismatch("transpose", xv, xv));
        }
        let out = xv.transpose();
        self.push("transpose", out, Op::Transpose(x))
    }

    pub fn trace(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if !is_matrix(xv) || xv.rows() != xv.cols() {
            return Err(mismatch("trace", xv, xv));
        }
        let n = xv.rows();
        let out = Tensor::scalar((0..n).map(|i| xv.at(i, i)).sum());
        self.push("trace", out, Op::Trace(x))
    }

    /// Pairwise squared Euclidean distances between the rows of `x`.
    pub fn sq_dists(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if !is_matrix(xv) {
            return Err(mismatch("sq_dists", xv, xv));
        }
        let n = xv.rows();
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let d: f64 = xv
                    .row_slice(a)
                    .iter()
                    .zip(xv.row_slice(b))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum();
                out[a * n + b] = d;
                out[b * n + a] = d;
            }
        }
        self.push("sq_dists", Tensor::matrix(n, n, out), Op::SqDists(x))
    }

    // ----- composites -------------------------------------------------

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    // ----- backward ---------------------------------------------------

    /// Accumulates d`loss`/d`leaf` into every `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_impl(loss, None)
    }

    /// Like [`Graph::backward`], but only the listed leaves receive
    /// gradient; every path that cannot reach them is skipped.
    pub fn backward_to(&mut self, loss: Var, targets: &[Var]) -> Result<()> {
        self.backward_impl(loss, Some(targets))
    }

    fn backward_impl(&mut self, loss: Var, targets: Option<&[Var]>) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let end = loss.0 + 1;

        let mut relevant = vec![false; end];
        match targets {
            None => {
                for (i, r) in relevant.iter_mut().enumerate() {
                    *r = self.nodes[i].requires_grad;
                }
            }
            Some(ts) => {
                for t in ts {
                    if t.0 < end && self.nodes[t.0].requires_grad {
                        relevant[t.0] = true;
                    }
                }
                for i in 0..end {
                    if !relevant[i] && self.nodes[i].op.inputs().iter().any(|p| relevant[p.0]) {
                        relevant[i] = true;
                    }
                }
            }
        }
        if !relevant[loss.0] {
            return Ok(());
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; end];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..end).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                if let Some(acc) = self.nodes[i].grad.as_mut() {
                    acc.add_assign(&g)?;
                }
                continue;
            }
            for (parent, pg) in self.local_grads(i, &g, &relevant)? {
                match grads[parent.0].as_mut() {
                    Some(existing) => existing.add_assign(&pg)?,
                    None => grads[parent.0] = Some(pg),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for its relevant inputs.
    fn local_grads(&self, i: usize, g: &Tensor, relevant: &[bool]) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let y = &node.value;
        let want = |v: &Var| relevant[v.0];
        let val = |v: &Var| &self.nodes[v.0].value;
        let mut out = Vec::with_capacity(2);

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if want(a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        let grow = &g.data()[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            da[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    out.push((*a, Tensor::matrix(m, k, da)));
                }
                if want(b) {
                    // dB = Aᵀ · G
                    let at = av.transpose();
                    let mut db = vec![0.0; k * n];
                    matmul_into(at.data(), g.data(), &mut db, k, m, n);
                    out.push((*b, Tensor::matrix(k, n, db)));
                }
            }
            Op::Add(a, b) => {
                if want(a) {
                    out.push((*a, g.clone()));
                }
                if want(b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    out.push((*a, g.clone()));
                }
                if want(b) {
                    out.push((*b, g.map(|v| -v)));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    out.push((*a, zip(g, val(b), |x, y| x * y)));
                }
                if want(b) {
                    out.push((*b, zip(g, val(a), |x, y| x * y)));
                }
            }
            Op::AddRow(x, v) => {
                if want(x) {
                    out.push((*x, g.clone()));
                }
                if want(v) {
                    let sums = column_sums(g);
                    out.push((*v, Tensor::new(val(v).shape().to_vec(), sums)?));
                }
            }
            Op::MulRow(x, v) => {
                let cols = g.cols();
                if want(x) {
                    let row = val(v).data();
                    let data = g.data().iter().enumerate().map(|(j, &e)| e * row[j % cols]).collect();
                    out.push((*x, Tensor::new(g.shape().to_vec(), data)?));
                }
                if want(v) {
                    let prod = zip(g, val(x), |p, q| p * q);
                    out.push((*v, Tensor::new(val(v).shape().to_vec(), column_sums(&prod))?));
                }
            }
            Op::Scale(x, f) => {
                if want(x) {
                    out.push((*x, g.map(|v| v * f)));
                }
            }
            Op::Sigmoid(x) => out.push((*x, zip(g, y, |gv, s| gv * s * (1.0 - s)))),
            Op::Tanh(x) => out.push((*x, zip(g, y, |gv, t| gv * (1.0 - t * t)))),
            Op::Relu(x) => out.push((*x, zip(g, val(x), |gv, xv| if xv > 0.0 { gv } else { 0.0 }))),
            Op::Exp(x) => out.push((*x, zip(g, y, |gv, e| gv * e))),
            Op::Softmax(x) => {
                let cols = y.cols();
                let mut dx = vec![0.0; y.len()];
                for ((drow, grow), yrow) in dx
                    .chunks_mut(cols)
                    .zip(g.data().chunks(cols))
                    .zip(y.data().chunks(cols))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((d, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = yv * (gv - dot);
                    }
                }
                out.push((*x, Tensor::new(y.shape().to_vec(), dx)?));
            }
            Op::LogSoftmax(x) => {
                let cols = y.cols();
                let mut dx = vec![0.0; y.len()];
                for ((drow, grow), yrow) in dx
                    .chunks_mut(cols)
                    .zip(g.data().chunks(cols))
                    .zip(y.data().chunks(cols))
                {
                    let total: f64 = grow.iter().sum();
                    for ((d, gv), lp) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = gv - lp.exp() * total;
                    }
                }
                out.push((*x, Tensor::new(y.shape().to_vec(), dx)?));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for p in parts {
                    let w = val(p).cols();
                    if want(p) {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                        }
                        out.push((*p, Tensor::matrix(rows, w, data)));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let h = val(p).rows();
                    if want(p) {
                        out.push((*p, g.slice_rows(offset, offset + h)));
                    }
                    offset += h;
                }
            }
            Op::SliceCols(x, start, end) => {
                let xv = val(x);
                let mut dx = Tensor::zeros(xv.shape());
                for r in 0..xv.rows() {
                    for c in *start..*end {
                        dx.set(r, c, g.at(r, c - start));
                    }
                }
                out.push((*x, dx));
            }
            Op::SliceRows(x, start, end) => {
                let xv = val(x);
                let cols = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                dx.data_mut()[start * cols..end * cols].copy_from_slice(g.data());
                out.push((*x, dx));
            }
            Op::MeanAxis(x, axis) => {
                let xv = val(x);
                let (r, c) = (xv.rows(), xv.cols());
                let mut dx = Tensor::zeros(xv.shape());
                for i in 0..r {
                    for j in 0..c {
                        let v = if *axis == 0 {
                            g.data()[j] / r as f64
                        } else {
                            g.data()[i] / c as f64
                        };
                        dx.set(i, j, v);
                    }
                }
                out.push((*x, dx));
            }
            Op::Sum(x) => out.push((*x, Tensor::full(val(x).shape(), g.item()))),
            Op::Transpose(x) => out.push((*x, g.transpose())),
            Op::Trace(x) => {
                let n = val(x).rows();
                let mut dx = Tensor::zeros(&[n, n]);
                for k in 0..n {
                    dx.set(k, k, g.item());
                }
                out.push((*x, dx));
            }
            Op::SqDists(x) => {
                let xv = val(x);
                let (n, d) = (xv.rows(), xv.cols());
                let mut dx = Tensor::zeros(xv.shape());
                for a in 0..n {
                    for b in 0..n {
                        if a == b {
                            continue;
                        }
                        let w = 2.0 * (g.at(a, b) + g.at(b, a));
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..d {
                            let delta = xv.at(a, k) - xv.at(b, k);
                            let cur = dx.at(a, k);
                            dx.set(a, k, cur + w * delta);
                        }
                    }
                }
                out.push((*x, dx));
            }
        }
        // Unary ops above push unconditionally; drop inputs the pass skips.
        out.retain(|(v, _)| want(v));
        Ok(out)
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

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip of equal shapes")
}

fn column_sums(t: &Tensor) -> Vec<f64> {
    let c = t.cols();
    let mut acc = vec![0.0; c];
    for row in t.data().chunks(c) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc
}
