//! Tape-based reverse-mode differentiation over rank-2 arrays.
//!
//! Every operation appends a node holding its output value and the handles of
//! its inputs. [`Tape::gradients`] walks the tape backwards from a scalar and
//! returns the gradient of every [`ParamStore`] entry that was read through
//! [`Tape::param`] and is still trainable.

use std::collections::HashMap;

use super::array::{gemm, Array};
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    Log(Var),
    Exp(Var),
    Powf(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    SumCols(Var),
    CosineRows(Var, Var, f64),
    StraightThrough(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    Clamp(Var, f64, f64),
    PickCols(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    needs_grad: bool,
}

/// A single computation graph. Build one per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, a: &Array, b: &Array) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Row-wise softmax of a matrix.
pub fn softmax_rows(a: &Array) -> Array {
    let mut out = a.as_matrix();
    let cols = out.cols();
    for row in out.data_mut().chunks_mut(cols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

fn log_softmax_rows(a: &Array) -> Array {
    let mut out = a.as_matrix();
    let cols = out.cols();
    for row in out.data_mut().chunks_mut(cols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array, op: Op, needs_grad: bool) -> Var {
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

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        let value = value.as_matrix();
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Array::scalar(v))
    }

    /// Reads a parameter onto the tape. Repeated reads share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let value = store.value(id).as_matrix();
        let v = self.push(value, Op::Param(id), store.is_trainable(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", va, vb));
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = Array::zeros(&[m, n]);
        gemm(m, k, n, va.data(), false, vb.data(), false, out.data_mut(), 0.0);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(op, va, vb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// `a (n×m) + row (1×m)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(shape_err("add_row", va, vr));
        }
        let mut out = va.clone();
        let cols = out.cols();
        for r in out.data_mut().chunks_mut(cols) {
            for (x, b) in r.iter_mut().zip(vr.data()) {
                *x += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// `a (n×m) ⊙ col (n×1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (va, vc) = (self.value(a), self.value(col));
        if vc.cols() != 1 || vc.rows() != va.rows() {
            return Err(shape_err("mul_col", va, vc));
        }
        let mut out = va.clone();
        let cols = out.cols();
        for (r, row) in out.data_mut().chunks_mut(cols).enumerate() {
            let s = vc.data()[r];
            for x in row {
                *x *= s;
            }
        }
        let ng = self.ng(a) || self.ng(col);
        Ok(self.push(out, Op::MulCol(a, col), ng))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Div(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, factor), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(out, Op::Shift(a), ng)
    }

    /// `c - a`
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, c)
    }

    /// Concatenation along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::domain("concat of zero arrays"))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(shape_err("concat", self.value(*first), self.value(*p)));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Array::zeros(&[rows, total]);
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let src = self.value(*p).data();
            let dst = out.data_mut();
            for r in 0..rows {
                dst[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), ng))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        if start >= end || end > va.cols() {
            return Err(Error::domain(format!(
                "column slice {start}..{end} out of range for shape {:?}",
                va.shape()
            )));
        }
        let (rows, cols, w) = (va.rows(), va.cols(), end - start);
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&va.data()[r * cols + start..r * cols + end]);
        }
        let out = Array::matrix(rows, w, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    /// Same values in row-major order as a `rows × cols` matrix.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).clone().reshape(vec![rows, cols])?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        let ng = self.ng(a);
        self.push(out, Op::Softplus(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let ng = self.ng(a);
        self.push(out, Op::Log(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let out = self.value(a).map(|x| x.powf(p));
        let ng = self.ng(a);
        self.push(out, Op::Powf(a, p), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.powf(a, 2.0)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let ng = self.ng(a);
        self.push(out, Op::Softmax(a), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = log_softmax_rows(self.value(a));
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmax(a), ng)
    }

    /// Sum of all entries, `1×1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums, `n×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let cols = va.cols();
        let data = va.data().chunks(cols).map(|r| r.iter().sum()).collect();
        let out = Array::column(data);
        let ng = self.ng(a);
        self.push(out, Op::SumCols(a), ng)
    }

    /// Row-wise cosine similarity `n×1`, with `eps` added to each norm.
    pub fn cosine_rows(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        self.same_shape("cosine_similarity", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let cols = va.cols();
        let data = va
            .data()
            .chunks(cols)
            .zip(vb.data().chunks(cols))
            .map(|(x, y)| cosine(x, y, eps))
            .collect();
        let out = Array::column(data);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::CosineRows(a, b, eps), ng))
    }

    /// Identity on values, blocks the backward pass.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(v, Op::Leaf, false)
    }

    /// Forward value `hard`, backward identity into `soft`.
    pub fn straight_through(&mut self, soft: Var, hard: Array) -> Result<Var> {
        let hard = hard.as_matrix();
        if hard.shape() != self.value(soft).shape() {
            return Err(shape_err("straight_through", self.value(soft), &hard));
        }
        let ng = self.ng(soft);
        Ok(self.push(hard, Op::StraightThrough(soft), ng))
    }

    /// Rows of `a` at `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::domain(format!("row index {i} out of range for {rows} rows")));
            }
            data.extend_from_slice(va.row_slice(i));
        }
        let out = Array::matrix(idx.len(), cols, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), ng))
    }

    /// `out[idx[r]] += a[r]` into `n_out` zero rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], n_out: usize) -> Result<Var> {
        let va = self.value(a);
        if idx.len() != va.rows() {
            return Err(Error::domain(format!(
                "scatter index has {} entries for {} rows",
                idx.len(),
                va.rows()
            )));
        }
        let cols = va.cols();
        let mut out = Array::zeros(&[n_out, cols]);
        for (r, &i) in idx.iter().enumerate() {
            if i >= n_out {
                return Err(Error::domain(format!("scatter target {i} out of range {n_out}")));
            }
            let src = &va.data()[r * cols..(r + 1) * cols];
            let dst = &mut out.data_mut()[i * cols..(i + 1) * cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::ScatterAddRows(a, idx.to_vec()), ng))
    }

    /// Clamp into `[lo, hi]`; gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.ng(a);
        self.push(out, Op::Clamp(a, lo, hi), ng)
    }

    /// `out[r] = a[r, idx[r]]`, shape `n×1`.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let va = self.value(a);
        if idx.len() != va.rows() {
            return Err(Error::domain(format!(
                "pick index has {} entries for {} rows",
                idx.len(),
                va.rows()
            )));
        }
        let cols = va.cols();
        let mut data = Vec::with_capacity(idx.len());
        for (r, &c) in idx.iter().enumerate() {
            if c >= cols {
                return Err(Error::domain(format!("column {c} out of range for {cols} columns")));
            }
            data.push(va.get(r, c));
        }
        let out = Array::column(data);
        let ng = self.ng(a);
        Ok(self.push(out, Op::PickCols(a, idx.to_vec()), ng))
    }

    /// Reverse pass from a scalar node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::domain(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array::filled(lv.shape(), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, g, &mut grads, &mut out);
        }
        out.grads.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    /// Reverse pass that accumulates straight into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let g = self.gradients(loss)?;
        store.accumulate(&g);
        Ok(())
    }

    fn backward_node(
        &self,
        node: &Node,
        g: Array,
        grads: &mut [Option<Array>],
        out: &mut Gradients,
    ) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut send = |v: Var, d: Array| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.grads.push((*id, g)),
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.nodes[a.0].needs_grad {
                    let mut da = Array::zeros(&[m, k]);
                    gemm(m, n, k, g.data(), false, vb.data(), true, da.data_mut(), 0.0);
                    send(*a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = Array::zeros(&[k, n]);
                    gemm(k, m, n, va.data(), true, g.data(), false, db.data_mut(), 0.0);
                    send(*b, db);
                }
            }
            Op::Add(a, b) => {
                send(*b, g.clone());
                send(*a, g);
            }
            Op::AddRow(a, row) => {
                let cols = g.cols();
                let mut dr = vec![0.0; cols];
                for r in g.data().chunks(cols) {
                    for (acc, x) in dr.iter_mut().zip(r) {
                        *acc += x;
                    }
                }
                send(*row, Array::row(dr));
                send(*a, g);
            }
            Op::Sub(a, b) => {
                send(*b, g.map(|x| -x));
                send(*a, g);
            }
            Op::Mul(a, b) => {
                send(*a, g.zip_map(val(*b), |x, y| x * y));
                send(*b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::MulCol(a, col) => {
                let (va, vc) = (val(*a), val(*col));
                let cols = g.cols();
                let mut da = g.clone();
                let mut dc = vec![0.0; vc.rows()];
                for (r, row) in da.data_mut().chunks_mut(cols).enumerate() {
                    let s = vc.data()[r];
                    let arow = va.row_slice(r);
                    let mut acc = 0.0;
                    for (x, av) in row.iter_mut().zip(arow) {
                        acc += *x * av;
                        *x *= s;
                    }
                    dc[r] = acc;
                }
                send(*col, Array::column(dc));
                send(*a, da);
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                send(*a, g.zip_map(vb, |x, y| x / y));
                let mut db = g.zip_map(va, |x, y| x * y);
                for (d, y) in db.data_mut().iter_mut().zip(vb.data()) {
                    *d = -*d / (y * y);
                }
                send(*b, db);
            }
            Op::Scale(a, f) => send(*a, g.map(|x| x * f)),
            Op::Shift(a) => send(*a, g),
            Op::Concat(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols();
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    send(*p, Array::matrix(rows, w, d).expect("concat backward"));
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let va = val(*a);
                let (cols, w) = (va.cols(), g.cols());
                let mut d = Array::zeros(va.shape());
                for r in 0..va.rows() {
                    d.data_mut()[r * cols + start..r * cols + start + w]
                        .copy_from_slice(g.row_slice(r));
                }
                send(*a, d);
            }
            Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                send(*a, g.reshape(shape).expect("same length"));
            }
            Op::Sigmoid(a) => {
                send(*a, g.zip_map(&node.value, |x, s| x * s * (1.0 - s)));
            }
            Op::Relu(a) => send(*a, g.zip_map(val(*a), |x, v| if v > 0.0 { x } else { 0.0 })),
            Op::Softplus(a) => send(*a, g.zip_map(val(*a), |x, v| x * sigmoid(v))),
            Op::Log(a) => send(*a, g.zip_map(val(*a), |x, v| x / v)),
            Op::Exp(a) => send(*a, g.zip_map(&node.value, |x, e| x * e)),
            Op::Powf(a, p) => {
                let p = *p;
                send(
                    *a,
                    g.zip_map(val(*a), |x, v| {
                        if p == 1.0 {
                            x
                        } else {
                            x * p * v.powf(p - 1.0)
                        }
                    }),
                );
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let cols = y.cols();
                let mut d = g.clone();
                for (r, row) in d.data_mut().chunks_mut(cols).enumerate() {
                    let yr = y.row_slice(r);
                    let dot: f64 = row.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (x, yv) in row.iter_mut().zip(yr) {
                        *x = yv * (*x - dot);
                    }
                }
                send(*a, d);
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let cols = y.cols();
                let mut d = g.clone();
                for (r, row) in d.data_mut().chunks_mut(cols).enumerate() {
                    let gs: f64 = row.iter().sum();
                    for (x, ly) in row.iter_mut().zip(y.row_slice(r)) {
                        *x -= ly.exp() * gs;
                    }
                }
                send(*a, d);
            }
            Op::Sum(a) => {
                let s = g.item();
                send(*a, Array::filled(val(*a).shape(), s));
            }
            Op::SumCols(a) => {
                let va = val(*a);
                let cols = va.cols();
                let mut d = Array::zeros(va.shape());
                for (r, row) in d.data_mut().chunks_mut(cols).enumerate() {
                    row.fill(g.data()[r]);
                }
                send(*a, d);
            }
            Op::CosineRows(a, b, eps) => {
                let (va, vb) = (val(*a), val(*b));
                let cols = va.cols();
                let mut da = Array::zeros(va.shape());
                let mut db = Array::zeros(vb.shape());
                for r in 0..va.rows() {
                    let (x, y) = (va.row_slice(r), vb.row_slice(r));
                    let (gx, gy) = cosine_grad(x, y, *eps);
                    let gr = g.data()[r];
                    for c in 0..cols {
                        da.data_mut()[r * cols + c] = gr * gx[c];
                        db.data_mut()[r * cols + c] = gr * gy[c];
                    }
                }
                send(*a, da);
                send(*b, db);
            }
            Op::StraightThrough(soft) => send(*soft, g),
            Op::GatherRows(a, idx) => {
                let va = val(*a);
                let cols = va.cols();
                let mut d = Array::zeros(va.shape());
                for (r, &i) in idx.iter().enumerate() {
                    let dst = &mut d.data_mut()[i * cols..(i + 1) * cols];
                    for (x, y) in dst.iter_mut().zip(g.row_slice(r)) {
                        *x += y;
                    }
                }
                send(*a, d);
            }
            Op::ScatterAddRows(a, idx) => {
                let cols = g.cols();
                let mut data = Vec::with_capacity(idx.len() * cols);
                for &i in idx {
                    data.extend_from_slice(g.row_slice(i));
                }
                send(*a, Array::matrix(idx.len(), cols, data).expect("scatter backward"));
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                send(
                    *a,
                    g.zip_map(val(*a), |x, v| if v >= lo && v <= hi { x } else { 0.0 }),
                );
            }
            Op::PickCols(a, idx) => {
                let va = val(*a);
                let mut d = Array::zeros(va.shape());
                for (r, &c) in idx.iter().enumerate() {
                    d.set(r, c, g.data()[r]);
                }
                send(*a, d);
            }
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn cosine(x: &[f64], y: &[f64], eps: f64) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    dot / ((norm(x) + eps) * (norm(y) + eps))
}

fn cosine_grad(x: &[f64], y: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let (nx, ny) = (norm(x), norm(y));
    let (dx, dy) = (nx + eps, ny + eps);
    let denom = dx * dy;
    let gx = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let unit = if nx > 0.0 { xi / nx } else { 0.0 };
            yi / denom - dot / (dx * dx * dy) * unit
        })
        .collect();
    let gy = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let unit = if ny > 0.0 { yi / ny } else { 0.0 };
            xi / denom - dot / (dx * dy * dy) * unit
        })
        .collect();
    (gx, gy)
}
