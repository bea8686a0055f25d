use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{contract, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Elu(usize),
    Abs(usize),
    Square(usize),
    Exp(usize),
    LogSoftmax(usize),
    Reshape(usize),
    SliceCols(usize, usize),
    ConcatRows(Vec<usize>),
    Gather(usize, Vec<usize>),
    RowBmm(usize, usize),
    Sum(usize),
    WeightedSum(usize, Vec<f64>),
    Mean(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Dynamic reverse-mode tape.
///
/// Nodes are appended in evaluation order, so inputs always precede their
/// consumers and the backward sweep is a plain reverse scan. A tape is built
/// fresh for every forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(usize, u64, ParamId)>,
    loaded: HashMap<(u64, usize), usize>,
}

/// Gradients of a scalar with respect to every differentiable node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for a leaf created with [`Tape::variable`] or [`Tape::param`].
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: slice extents are checked by the callers' shape validation;
    // strides describe row-major or transposed views of those slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.val(v);
        if t.rank() != 2 {
            return Err(Error::Shape {
                op,
                lhs: t.shape().to_vec(),
                rhs: vec![0, 0],
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf not owned by any store (gradient via [`Gradients::wrt`]).
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Loads a parameter; repeated loads of the same tensor return the same leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store.uid(), id.index());
        if let Some(&node) = self.loaded.get(&key) {
            return Var(node);
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Leaf,
            needs_grad: store.requires_grad(),
        });
        let node = self.nodes.len() - 1;
        self.loaded.insert(key, node);
        if store.requires_grad() {
            self.bindings.push((node, store.uid(), id));
        }
        Var(node)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            (self.val(a).data(), k as isize, 1),
            (self.val(b).data(), n as isize, 1),
            &mut out,
            0.0,
        );
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a.0, b.0), ng, "matmul")
    }

    /// `a + b` where `b` is either the same shape or a single row broadcast over `a`'s rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "add_row")?;
        let bt = self.val(b);
        let ok = bt.len() == n && (bt.rank() == 1 || bt.rows() == 1) || bt.shape() == [m, n];
        if !ok {
            return Err(Error::Shape {
                op: "add_row",
                lhs: vec![m, n],
                rhs: bt.shape().to_vec(),
            });
        }
        let bd = bt.data();
        let mut out = self.val(a).data().to_vec();
        if bd.len() == n {
            for row in out.chunks_mut(n.max(1)) {
                row.iter_mut().zip(bd).for_each(|(o, b)| *o += b);
            }
        } else {
            out.iter_mut().zip(bd).for_each(|(o, b)| *o += b);
        }
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(Tensor::matrix(m, n, out)?, Op::AddRow(a.0, b.0), ng, "add_row")
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op: name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape(), data)?;
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(t, op, ng, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let ta = self.val(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::new(ta.shape(), data)?;
        let ng = self.needs(a.0);
        self.push(t, op, ng, name)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, "scale", |x| c * x, Op::Scale(a.0, c))
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, "shift", |x| x + c, Op::Shift(a.0))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// `1 - a`, the complement used by gated recurrences.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let n = self.scale(a, -1.0)?;
        self.shift(n, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sigmoid", sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", f64::tanh, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "relu", |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a.0))
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "elu", |x| if x > 0.0 { x } else { x.exp_m1() }, Op::Elu(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "abs", f64::abs, Op::Abs(a.0))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "square", |x| x * x, Op::Square(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", f64::exp, Op::Exp(a.0))
    }

    /// Row-wise log-softmax of a matrix (a rank-1 tensor counts as one row).
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.val(a);
        let cols = ta.cols();
        if cols == 0 {
            return Err(contract("log_softmax over zero columns"));
        }
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let t = Tensor::new(ta.shape(), out)?;
        let ng = self.needs(a.0);
        self.push(t, Op::LogSoftmax(a.0), ng, "log_softmax")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.val(a).clone().reshaped(shape)?;
        let ng = self.needs(a.0);
        self.push(t, Op::Reshape(a.0), ng, "reshape")
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "slice_cols")?;
        if start + width > n {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: vec![m, n],
                rhs: vec![start, width],
            });
        }
        let src = self.val(a).data();
        let mut out = Vec::with_capacity(m * width);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + width]);
        }
        let ng = self.needs(a.0);
        self.push(Tensor::matrix(m, width, out)?, Op::SliceCols(a.0, start), ng, "slice_cols")
    }

    /// Stacks matrices with equal column counts along the leading dimension.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| contract("concat_rows of nothing"))?;
        let (_, n) = self.matrix_dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        let mut ng = false;
        for &p in parts {
            let (m, c) = self.matrix_dims(p, "concat_rows")?;
            if c != n {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: vec![rows, n],
                    rhs: vec![m, c],
                });
            }
            rows += m;
            data.extend_from_slice(self.val(p).data());
            ng |= self.needs(p.0);
        }
        let idx = parts.iter().map(|p| p.0).collect();
        self.push(Tensor::matrix(rows, n, data)?, Op::ConcatRows(idx), ng, "concat_rows")
    }

    /// Picks column `index[r]` from each row `r`, giving a `rows × 1` matrix.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "gather")?;
        if index.len() != m {
            return Err(Error::Shape {
                op: "gather",
                lhs: vec![m, n],
                rhs: vec![index.len()],
            });
        }
        if let Some(bad) = index.iter().find(|&&i| i >= n) {
            return Err(contract(format!("gather index {bad} out of range for {n} columns")));
        }
        let src = self.val(a).data();
        let out = index.iter().enumerate().map(|(r, &c)| src[r * n + c]).collect();
        let ng = self.needs(a.0);
        self.push(Tensor::matrix(m, 1, out)?, Op::Gather(a.0, index.to_vec()), ng, "gather")
    }

    /// Per-row vector-matrix product: row `b` of `q` (length `n`) times the
    /// `n × m` matrix stored row-major in row `b` of `w`.
    pub fn row_bmm(&mut self, q: Var, w: Var) -> Result<Var> {
        let (bq, n) = self.matrix_dims(q, "row_bmm")?;
        let (bw, nm) = self.matrix_dims(w, "row_bmm")?;
        if bq != bw || n == 0 || nm % n != 0 {
            return Err(Error::Shape {
                op: "row_bmm",
                lhs: vec![bq, n],
                rhs: vec![bw, nm],
            });
        }
        let m = nm / n;
        let (qd, wd) = (self.val(q).data(), self.val(w).data());
        let mut out = vec![0.0; bq * m];
        for b in 0..bq {
            let o = &mut out[b * m..(b + 1) * m];
            for i in 0..n {
                let qi = qd[b * n + i];
                let wrow = &wd[b * nm + i * m..b * nm + (i + 1) * m];
                o.iter_mut().zip(wrow).for_each(|(acc, w)| *acc += qi * w);
            }
        }
        let ng = self.needs(q.0) || self.needs(w.0);
        self.push(Tensor::matrix(bq, m, out)?, Op::RowBmm(q.0, w.0), ng, "row_bmm")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.val(a).data().iter().sum();
        let ng = self.needs(a.0);
        self.push(Tensor::scalar(s), Op::Sum(a.0), ng, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.val(a);
        if t.is_empty() {
            return Err(contract("mean of empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.needs(a.0);
        self.push(Tensor::scalar(s), Op::Mean(a.0), ng, "mean")
    }

    /// `Σ w_i a_i` with constant weights (masked means, label picks).
    pub fn weighted_sum(&mut self, a: Var, weights: &[f64]) -> Result<Var> {
        let t = self.val(a);
        if t.len() != weights.len() {
            return Err(Error::Shape {
                op: "weighted_sum",
                lhs: t.shape().to_vec(),
                rhs: vec![weights.len()],
            });
        }
        let s = t.data().iter().zip(weights).map(|(x, w)| x * w).sum();
        let ng = self.needs(a.0);
        self.push(Tensor::scalar(s), Op::WeightedSum(a.0, weights.to_vec()), ng, "weighted_sum")
    }

    /// Reverse sweep from a scalar.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(contract("backward on an empty tape"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    /// Accumulates `∂loss/∂param` into the gradient buffers of the given stores.
    ///
    /// Gradients add onto whatever the buffers already hold; call
    /// [`ParamStore::zero_grad`] between steps.
    pub fn backward(&self, loss: Var, stores: &mut [&mut ParamStore]) -> Result<()> {
        let grads = self.gradients(loss)?;
        for &(node, uid, id) in &self.bindings {
            if let (Some(g), Some(store)) = (
                grads.grads[node].as_deref(),
                stores.iter_mut().find(|s| s.uid() == uid),
            ) {
                store.accumulate_grad(id, g);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut send = |j: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[j].needs_grad {
                return;
            }
            let buf = grads[j].get_or_insert_with(|| vec![0.0; self.nodes[j].value.len()]);
            f(buf);
        };
        let x = |j: usize| self.nodes[j].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[*a].value.shape()[0], self.nodes[*a].value.shape()[1]);
                let n = self.nodes[*b].value.shape()[1];
                // dA = G · Bᵀ
                send(*a, &mut |buf| {
                    gemm(m, n, k, (g, n as isize, 1), (x(*b), 1, n as isize), buf, 1.0)
                });
                // dB = Aᵀ · G
                send(*b, &mut |buf| {
                    gemm(k, m, n, (x(*a), 1, k as isize), (g, n as isize, 1), buf, 1.0)
                });
            }
            Op::AddRow(a, b) => {
                send(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                let bl = self.nodes[*b].value.len();
                send(*b, &mut |buf| {
                    for row in g.chunks(bl.max(1)) {
                        buf.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::Add(a, b) => {
                send(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                send(*b, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                send(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                send(*b, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (x(*a), x(*b));
                send(*a, &mut |buf| {
                    for ((d, g), v) in buf.iter_mut().zip(g).zip(xb) {
                        *d += g * v;
                    }
                });
                send(*b, &mut |buf| {
                    for ((d, g), v) in buf.iter_mut().zip(g).zip(xa) {
                        *d += g * v;
                    }
                });
            }
            Op::Scale(a, c) => {
                send(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, g)| *d += c * g));
            }
            Op::Shift(a) | Op::Reshape(a) => {
                send(*a, &mut |buf| buf.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sigmoid(a) => send(*a, &mut |buf| {
                for ((d, g), y) in buf.iter_mut().zip(g).zip(y) {
                    *d += g * y * (1.0 - y);
                }
            }),
            Op::Tanh(a) => send(*a, &mut |buf| {
                for ((d, g), y) in buf.iter_mut().zip(g).zip(y) {
                    *d += g * (1.0 - y * y);
                }
            }),
            Op::Relu(a) => {
                let xa = x(*a);
                send(*a, &mut |buf| {
                    for ((d, g), v) in buf.iter_mut().zip(g).zip(xa) {
                        if *v > 0.0 {
                            *d += g;
                        }
                    }
                })
            }
            Op::Elu(a) => {
                let xa = x(*a);
                send(*a, &mut |buf| {
                    for (((d, g), v), y) in buf.iter_mut().zip(g).zip(xa).zip(y) {
                        *d += if *v > 0.0 { *g } else { g * (y + 1.0) };
                    }
                })
            }
            Op::Abs(a) => {
                let xa = x(*a);
                send(*a, &mut |buf| {
                    for ((d, g), v) in buf.iter_mut().zip(g).zip(xa) {
                        if *v > 0.0 {
                            *d += g;
                        } else if *v < 0.0 {
                            *d -= g;
                        }
                    }
                })
            }
            Op::Square(a) => {
                let xa = x(*a);
                send(*a, &mut |buf| {
                    for ((d, g), v) in buf.iter_mut().zip(g).zip(xa) {
                        *d += 2.0 * v * g;
                    }
                })
            }
            Op::Exp(a) => send(*a, &mut |buf| {
                for ((d, g), y) in buf.iter_mut().zip(g).zip(y) {
                    *d += g * y;
                }
            }),
            Op::LogSoftmax(a) => {
                let cols = node.value.cols();
                send(*a, &mut |buf| {
                    for ((drow, grow), yrow) in
                        buf.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols))
                    {
                        let gsum: f64 = grow.iter().sum();
                        for ((d, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += g - y.exp() * gsum;
                        }
                    }
                })
            }
            Op::SliceCols(a, start) => {
                let n = self.nodes[*a].value.cols();
                let w = node.value.cols();
                send(*a, &mut |buf| {
                    for (r, grow) in g.chunks(w.max(1)).enumerate() {
                        let dst = &mut buf[r * n + start..r * n + start + w];
                        dst.iter_mut().zip(grow).for_each(|(d, g)| *d += g);
                    }
                })
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].value.len();
                    let chunk = &g[offset..offset + len];
                    send(p, &mut |buf| buf.iter_mut().zip(chunk).for_each(|(d, g)| *d += g));
                    offset += len;
                }
            }
            Op::Gather(a, index) => {
                let n = self.nodes[*a].value.cols();
                send(*a, &mut |buf| {
                    for (r, &c) in index.iter().enumerate() {
                        buf[r * n + c] += g[r];
                    }
                })
            }
            Op::RowBmm(q, w) => {
                let n = self.nodes[*q].value.cols();
                let nm = self.nodes[*w].value.cols();
                let m = nm / n;
                let (qd, wd) = (x(*q), x(*w));
                send(*q, &mut |buf| {
                    for b in 0..buf.len() / n {
                        let grow = &g[b * m..(b + 1) * m];
                        for i in 0..n {
                            let wrow = &wd[b * nm + i * m..b * nm + (i + 1) * m];
                            buf[b * n + i] += grow.iter().zip(wrow).map(|(g, w)| g * w).sum::<f64>();
                        }
                    }
                });
                send(*w, &mut |buf| {
                    for b in 0..buf.len() / nm {
                        let grow = &g[b * m..(b + 1) * m];
                        for i in 0..n {
                            let qi = qd[b * n + i];
                            let dst = &mut buf[b * nm + i * m..b * nm + (i + 1) * m];
                            dst.iter_mut().zip(grow).for_each(|(d, g)| *d += qi * g);
                        }
                    }
                });
            }
            Op::Sum(a) => send(*a, &mut |buf| buf.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = self.nodes[*a].value.len() as f64;
                send(*a, &mut |buf| buf.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::WeightedSum(a, w) => send(*a, &mut |buf| {
                buf.iter_mut().zip(w).for_each(|(d, w)| *d += g[0] * w)
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_row_by_column() {
        let mut t = Tape::new();
        let a = t.constant(m(1, 2, &[1.0, 2.0]));
        let b = t.constant(m(2, 1, &[3.0, 4.0]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[11.0]);
        assert_eq!(t.shape(c), &[1, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(m(1, 2, &[1.0, 2.0]));
        let b = t.constant(m(3, 1, &[3.0, 4.0, 5.0]));
        match t.matmul(a, b) {
            Err(Error::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![1, 2]);
                assert_eq!(rhs, vec![3, 1]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_softmax_of_zeros_is_minus_ln_two() {
        let mut t = Tape::new();
        let z = t.constant(m(1, 2, &[0.0, 0.0]));
        let y = t.log_softmax(z).unwrap();
        for v in t.value(y).data() {
            assert_eq!(*v, -std::f64::consts::LN_2);
        }
    }

    #[test]
    fn relu_clamps_negative() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(-3.5));
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).item().unwrap(), 0.0);
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.variable(Tensor::scalar(3.0));
        let y = t.square(x).unwrap();
        let g = t.gradients(y).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[6.0]);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let z0 = [0.3, -1.2, 2.0, 0.5, 0.5, -0.7];
        let labels = [2usize, 0];
        let mut t = Tape::new();
        let z = t.variable(m(2, 3, &z0));
        let lp = t.log_softmax(z).unwrap();
        let picked = t.gather(lp, &labels).unwrap();
        let loss = t.sum(picked).unwrap();
        let g = t.gradients(loss).unwrap();
        let gz = g.wrt(z).unwrap();
        for r in 0..2 {
            let row = &z0[r * 3..r * 3 + 3];
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for c in 0..3 {
                let p = (row[c] - max).exp() / denom;
                let onehot = if c == labels[r] { 1.0 } else { 0.0 };
                // loss is Σ log p(label); its gradient is onehot − softmax
                assert!((gz[r * 3 + c] - (onehot - p)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.variable(m(1, 2, &[1.0, 2.0]));
        let y = t.square(x).unwrap();
        assert!(matches!(t.gradients(y), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_output_is_a_numeric_fault() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(800.0));
        match t.exp(x) {
            Err(Error::NonFinite { op }) => assert_eq!(op, "exp"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backward_accumulates_into_store() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(2.0)).unwrap();
        for _ in 0..2 {
            let mut t = Tape::new();
            let w = t.param(&store, id);
            let y = t.square(w).unwrap();
            t.backward(y, &mut [&mut store]).unwrap();
        }
        assert_eq!(store.grad(id).data(), &[8.0]);
        store.zero_grad();
        assert_eq!(store.grad(id).data(), &[0.0]);
    }

    #[test]
    fn frozen_store_receives_nothing() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(2.0)).unwrap();
        let mut frozen = store.frozen_copy();
        let mut t = Tape::new();
        let w = t.param(&frozen, id);
        let y = t.square(w).unwrap();
        t.backward(y, &mut [&mut frozen]).unwrap();
        assert_eq!(frozen.grad(id).data(), &[0.0]);
    }
}
