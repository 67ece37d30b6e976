use std::sync::Arc;

use super::kernels::{gemm, gemm_nt, gemm_tn};
use super::{Real, Tensor};
use crate::error::{contract, Error, Result};

const LN_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Vec<S>,
        rstd: Vec<S>,
    },
    Gelu(Var, Vec<S>),
    Reshape(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    ReduceAxis {
        x: Var,
        axis: usize,
        scale: S,
    },
    Log(Var),
    Exp(Var),
    /// Scalar objective whose gradient w.r.t. `input` was computed alongside
    /// the value (e.g. CTC via forward-backward).
    FusedScalar {
        input: Var,
        grad: Vec<S>,
    },
}

struct Node<S> {
    value: Arc<Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
    trainable: bool,
}

/// Gradients of a scalar w.r.t. the trainable leaves of a tape.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Real> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Number of populated gradient accumulators.
    pub fn populated(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }
}

/// Linear record of primitive operations for one forward pass.
///
/// Insertion order is a topological order, so backward walks the node list
/// in reverse and visits every node once.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    grad_enabled: bool,
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that treats every leaf as constant and refuses `backward`.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shared(&self, v: Var) -> Arc<Tensor<S>> {
        Arc::clone(&self.nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_trainable(&self, v: Var) -> bool {
        self.nodes[v.0].trainable
    }

    /// Constant input (frozen weight or data).
    pub fn constant(&mut self, t: impl Into<Arc<Tensor<S>>>) -> Var {
        self.push_leaf(t.into(), false)
    }

    /// Trainable leaf. On an inference tape this is recorded as a constant.
    pub fn param(&mut self, t: impl Into<Arc<Tensor<S>>>) -> Var {
        let trainable = self.grad_enabled;
        self.push_leaf(t.into(), trainable)
    }

    fn push_leaf(&mut self, value: Arc<Tensor<S>>, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: trainable,
            trainable,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
            trainable: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.dims2(a, "matmul")?;
        let (k2, c) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![S::zero(); r * c];
        gemm(self.value(a).data(), self.value(b).data(), &mut out, r, k, c);
        self.push("matmul", Tensor::matrix(r, c, out)?, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "transpose")?;
        let out = self.value(a).transpose();
        debug_assert_eq!(out.shape(), &[c, r]);
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("add", a, b));
        }
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    /// Adds a `[1, c]` row vector to every row of an `[r, c]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "add_row")?;
        if self.shape(row) != [1, c] {
            return Err(self.shape_err("add_row", a, row));
        }
        let bias = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..r {
            for (x, &b) in data[i * c..(i + 1) * c].iter_mut().zip(bias) {
                *x = *x + b;
            }
        }
        self.push("add_row", Tensor::matrix(r, c, data)?, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, a: Var, s: S) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push("scale", out, Op::Scale(a, s), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "softmax_rows")?;
        let mut data = self.value(a).data().to_vec();
        for i in 0..r {
            softmax_in_place(&mut data[i * c..(i + 1) * c]);
        }
        self.push("softmax_rows", Tensor::matrix(r, c, data)?, Op::SoftmaxRows(a), &[a])
    }

    /// Row-wise layer normalization with affine `[1, c]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "layer_norm")?;
        if self.shape(gamma) != [1, c] {
            return Err(self.shape_err("layer_norm", x, gamma));
        }
        if self.shape(beta) != [1, c] {
            return Err(self.shape_err("layer_norm", x, beta));
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let n = S::lit(c as f64);
        let eps = S::lit(LN_EPS);
        let mut normed = vec![S::zero(); r * c];
        let mut rstd = vec![S::zero(); r];
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let rs = S::one() / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                normed[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        self.push(
            "layer_norm",
            Tensor::matrix(r, c, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut out = Vec::with_capacity(x.len());
        let mut slope = if self.grad_enabled { Vec::with_capacity(x.len()) } else { Vec::new() };
        for &v in x.data() {
            let (y, dy) = gelu(v);
            out.push(y);
            if self.grad_enabled {
                slope.push(dy);
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.push("gelu", out, Op::Gelu(a, slope), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(a).slice_rows(start, start + len)?;
        self.push("slice_rows", out, Op::SliceRows(a, start), &[a])
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(a, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(contract(format!("column slice {start}+{len} out of range for {c} columns")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        self.push("slice_cols", Tensor::matrix(r, len, data)?, Op::SliceCols(a, start), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| contract("concat of zero parts"))?;
        let (_, c) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, pc) = self.dims2(p, "concat_rows")?;
            if pc != c {
                return Err(self.shape_err("concat_rows", first, p));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        self.push("concat_rows", Tensor::matrix(rows, c, data)?, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| contract("concat of zero parts"))?;
        let (r, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols")?;
            if pr != r {
                return Err(self.shape_err("concat_cols", first, p));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push("concat_cols", Tensor::matrix(r, total, data)?, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum::<S>();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Sum over `axis` of a matrix, keeping rank 2 (`[1, c]` or `[r, 1]`).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, S::one(), "sum_axis")
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.dims2(a, "mean_axis")?;
        let n = if axis == 0 { r } else { c };
        self.reduce_axis(a, axis, S::one() / S::lit(n as f64), "mean_axis")
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, scale: S, name: &'static str) -> Result<Var> {
        let (r, c) = self.dims2(a, name)?;
        let src = self.value(a).data();
        let out = match axis {
            0 => {
                let mut acc = vec![S::zero(); c];
                for i in 0..r {
                    for (o, &v) in acc.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                        *o = *o + v;
                    }
                }
                acc.iter_mut().for_each(|o| *o = *o * scale);
                Tensor::matrix(1, c, acc)?
            }
            1 => {
                let acc = (0..r)
                    .map(|i| src[i * c..(i + 1) * c].iter().copied().sum::<S>() * scale)
                    .collect();
                Tensor::matrix(r, 1, acc)?
            }
            _ => return Err(contract(format!("axis {axis} out of range for a matrix"))),
        };
        self.push(name, out, Op::ReduceAxis { x: a, axis, scale }, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.ln());
        self.push("log", out, Op::Log(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.exp());
        self.push("exp", out, Op::Exp(a), &[a])
    }

    /// Records a scalar objective computed outside the tape together with its
    /// gradient w.r.t. `input`.
    pub fn fused_scalar(&mut self, name: &'static str, input: Var, value: S, grad: Vec<S>) -> Result<Var> {
        if grad.len() != self.value(input).len() {
            return Err(Error::Shape {
                op: name,
                lhs: self.shape(input).to_vec(),
                rhs: vec![grad.len()],
            });
        }
        self.push(name, Tensor::scalar(value), Op::FusedScalar { input, grad }, &[input])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if !self.grad_enabled {
            return Err(Error::GradDisabled);
        }
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if node.trainable {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, node.trainable) {
                (Some(g), true) => Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape")),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let mut acc = |v: Var, contrib: Vec<S>| match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e = *e + c),
            slot @ None => *slot = Some(contrib),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (r, k) = (va.rows(), va.cols());
                let c = vb.cols();
                if self.wants(*a) {
                    let mut da = vec![S::zero(); r * k];
                    gemm_nt(g, vb.data(), &mut da, r, c, k);
                    acc(*a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![S::zero(); k * c];
                    gemm_tn(va.data(), g, &mut db, r, k, c);
                    acc(*b, db);
                }
            }
            Op::Transpose(a) => {
                let v = self.value(*a);
                let (r, c) = (v.rows(), v.cols());
                let mut da = vec![S::zero(); r * c];
                super::kernels::transpose_into(g, &mut da, c, r);
                acc(*a, da);
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.to_vec());
                }
                if self.wants(*b) {
                    acc(*b, g.to_vec());
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*a) {
                    acc(*a, g.to_vec());
                }
                if self.wants(*row) {
                    let c = self.value(*row).len();
                    let mut db = vec![S::zero(); c];
                    for chunk in g.chunks(c) {
                        db.iter_mut().zip(chunk).for_each(|(d, &x)| *d = *d + x);
                    }
                    acc(*row, db);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let vb = self.value(*b).data();
                    acc(*a, g.iter().zip(vb).map(|(&x, &y)| x * y).collect());
                }
                if self.wants(*b) {
                    let va = self.value(*a).data();
                    acc(*b, g.iter().zip(va).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::Scale(a, s) => acc(*a, g.iter().map(|&x| x * *s).collect()),
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                let mut da = vec![S::zero(); y.len()];
                for ((dst, yr), gr) in da.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                    let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((d, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                acc(*a, da);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                rstd,
            } => {
                let c = node.value.cols();
                let gv = self.value(*gamma).data();
                if self.wants(*gamma) {
                    let mut dg = vec![S::zero(); c];
                    for (gr, hr) in g.chunks(c).zip(normed.chunks(c)) {
                        for j in 0..c {
                            dg[j] = dg[j] + gr[j] * hr[j];
                        }
                    }
                    acc(*gamma, dg);
                }
                if self.wants(*beta) {
                    let mut db = vec![S::zero(); c];
                    for gr in g.chunks(c) {
                        db.iter_mut().zip(gr).for_each(|(d, &v)| *d = *d + v);
                    }
                    acc(*beta, db);
                }
                if self.wants(*x) {
                    let n = S::lit(c as f64);
                    let mut dx = vec![S::zero(); g.len()];
                    for (i, ((dr, gr), hr)) in dx.chunks_mut(c).zip(g.chunks(c)).zip(normed.chunks(c)).enumerate() {
                        let mut sum_dh = S::zero();
                        let mut sum_dh_h = S::zero();
                        for j in 0..c {
                            let dh = gr[j] * gv[j];
                            sum_dh = sum_dh + dh;
                            sum_dh_h = sum_dh_h + dh * hr[j];
                        }
                        let k = rstd[i] / n;
                        for j in 0..c {
                            let dh = gr[j] * gv[j];
                            dr[j] = k * (n * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::Gelu(a, slope) => acc(*a, g.iter().zip(slope).map(|(&gv, &d)| gv * d).collect()),
            Op::Reshape(a) => acc(*a, g.to_vec()),
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let c = src.cols();
                let mut da = vec![S::zero(); src.len()];
                da[start * c..start * c + g.len()].copy_from_slice(g);
                acc(*a, da);
            }
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let (r, c) = (src.rows(), src.cols());
                let w = g.len() / r;
                let mut da = vec![S::zero(); src.len()];
                for i in 0..r {
                    da[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                acc(*a, da);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.wants(p) {
                        acc(p, g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let r = node.value.rows();
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(r * w);
                        for i in 0..r {
                            dp.extend_from_slice(&g[i * total + col..i * total + col + w]);
                        }
                        acc(p, dp);
                    }
                    col += w;
                }
            }
            Op::Sum(a) => acc(*a, vec![g[0]; self.value(*a).len()]),
            Op::ReduceAxis { x, axis, scale } => {
                let src = self.value(*x);
                let (r, c) = (src.rows(), src.cols());
                let mut dx = vec![S::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        let gi = if *axis == 0 { j } else { i };
                        dx[i * c + j] = g[gi] * *scale;
                    }
                }
                acc(*x, dx);
            }
            Op::Log(a) => {
                let xv = self.value(*a).data();
                acc(*a, g.iter().zip(xv).map(|(&gv, &x)| gv / x).collect());
            }
            Op::Exp(a) => {
                let y = node.value.data();
                acc(*a, g.iter().zip(y).map(|(&gv, &v)| gv * v).collect());
            }
            Op::FusedScalar { input, grad } => acc(*input, grad.iter().map(|&v| v * g[0]).collect()),
        }
    }
}

pub(crate) fn softmax_in_place<S: Real>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Value and slope of the tanh-approximated GELU.
fn gelu<S: Real>(x: S) -> (S, S) {
    let u = S::lit(GELU_K) * (x + S::lit(GELU_C) * x * x * x);
    let t = u.tanh();
    let du = S::lit(GELU_K) * (S::one() + S::lit(3.0 * GELU_C) * x * x);
    let half = S::lit(0.5);
    (half * x * (S::one() + t), half * (S::one() + t) + half * x * (S::one() - t * t) * du)
}
