//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every op appends a node whose parents were appended earlier, so the
//! insertion order is already a topological order and `backward` is a single
//! reverse sweep.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::ssm::selective::{self, ScanDims};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Exp(usize),
    Silu(usize),
    Softplus(usize),
    SoftmaxRows(usize),
    CausalConv {
        x: usize,
        kernel: usize,
    },
    RmsNorm {
        x: usize,
        gain: usize,
        inv_rms: Vec<f64>,
    },
    SelectiveScan {
        x: usize,
        delta: usize,
        a: usize,
        b: usize,
        c: usize,
        states: Vec<f64>,
        dims: ScanDims,
    },
    Transpose(usize),
    SliceCols {
        a: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    GatherRows {
        a: usize,
        rows: Vec<usize>,
    },
    ConcatRows(Vec<usize>),
    MeanRows(usize),
    Reshape(usize),
    Sum(usize),
    Huber {
        pred: usize,
        target: Vec<f64>,
        delta: f64,
    },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Silu(a)
            | Op::Softplus(a)
            | Op::SoftmaxRows(a)
            | Op::Transpose(a)
            | Op::MeanRows(a)
            | Op::Reshape(a)
            | Op::Sum(a) => vec![*a],
            Op::CausalConv { x, kernel } => vec![*x, *kernel],
            Op::RmsNorm { x, gain, .. } => vec![*x, *gain],
            Op::SelectiveScan { x, delta, a, b, c, .. } => vec![*x, *delta, *a, *b, *c],
            Op::SliceCols { a, .. } | Op::GatherRows { a, .. } => vec![*a],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
            Op::Huber { pred, .. } => vec![*pred],
        }
    }
}

/// Append-only record of operations.
#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    requires_grad: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
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

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let parents = op.parents();
        let requires = parents.iter().any(|&p| self.requires_grad[p]);
        self.values.push(value);
        self.ops.push(op);
        self.requires_grad.push(requires);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.requires_grad[v.0] = false;
        v
    }

    /// Leaf that receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.requires_grad[v.0] = true;
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v`, or zeros when nothing reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        let value = &self.values[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(value.shape().to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(value.shape()),
        }
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.values[v.0].dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                self.values[a.0].shape(),
                self.values[b.0].shape(),
            ));
        }
        let av = self.values[a.0].data();
        let bv = self.values[b.0].data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a.0, b.0)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.values[a.0].shape(), self.values[b.0].shape());
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = &self.values[a.0];
        let data = src.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let av = &self.values[a.0];
        let data = av
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a.0, b.0)))
    }

    /// `a[m×n] + bias[n]`, broadcasting the bias over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        if self.values[bias.0].numel() != n {
            return Err(Error::shape(
                "add_row",
                self.values[a.0].shape(),
                self.values[bias.0].shape(),
            ));
        }
        let bv = self.values[bias.0].data();
        let mut data = self.values[a.0].data().to_vec();
        for row in data.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv) {
                *o += b;
            }
        }
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::AddRow(a.0, bias.0)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let av = &self.values[a.0];
        let data = av
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| s * x, Op::Scale(a.0, s))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a.0))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        self.map(a, |x| x * sigmoid(x), Op::Silu(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a.0))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        let mut data = self.values[a.0].data().to_vec();
        for row in data.chunks_mut(n) {
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
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::SoftmaxRows(a.0)))
    }

    /// Depthwise causal convolution of `x[T×D]` with `kernel[W×D]`.
    ///
    /// The input is left-padded with `W−1` zeros, so output row `t` only
    /// sees input rows `≤ t`; the last kernel tap multiplies the current row.
    pub fn causal_depthwise_conv(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (t_len, d) = self.dims2(x)?;
        let (w, dk) = self.dims2(kernel)?;
        if dk != d || w == 0 {
            return Err(Error::shape(
                "causal_depthwise_conv",
                self.values[x.0].shape(),
                self.values[kernel.0].shape(),
            ));
        }
        let xv = self.values[x.0].data();
        let kv = self.values[kernel.0].data();
        let mut out = vec![0.0; t_len * d];
        for t in 0..t_len {
            for tap in 0..w {
                let Some(src) = (t + tap).checked_sub(w - 1) else {
                    continue;
                };
                let xrow = &xv[src * d..(src + 1) * d];
                let krow = &kv[tap * d..(tap + 1) * d];
                for ((o, xv), kv) in out[t * d..(t + 1) * d].iter_mut().zip(xrow).zip(krow) {
                    *o += kv * xv;
                }
            }
        }
        Ok(self.push(
            Tensor::matrix(t_len, d, out)?,
            Op::CausalConv {
                x: x.0,
                kernel: kernel.0,
            },
        ))
    }

    /// Row-wise RMS normalisation with a learned per-column gain.
    pub fn rmsnorm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (t_len, d) = self.dims2(x)?;
        if self.values[gain.0].numel() != d {
            return Err(Error::shape(
                "rmsnorm",
                self.values[x.0].shape(),
                self.values[gain.0].shape(),
            ));
        }
        if eps < 0.0 {
            return Err(Error::Contract(format!("rmsnorm eps must be >= 0, got {eps}")));
        }
        let xv = self.values[x.0].data();
        let gv = self.values[gain.0].data();
        let mut out = vec![0.0; t_len * d];
        let mut inv_rms = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let row = &xv[t * d..(t + 1) * d];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64 + eps;
            // an all-zero row with eps = 0 maps to zeros
            let r = if ms > 0.0 { 1.0 / ms.sqrt() } else { 0.0 };
            inv_rms.push(r);
            for j in 0..d {
                out[t * d + j] = gv[j] * row[j] * r;
            }
        }
        Ok(self.push(
            Tensor::matrix(t_len, d, out)?,
            Op::RmsNorm {
                x: x.0,
                gain: gain.0,
                inv_rms,
            },
        ))
    }

    /// Selective state-space scan.
    ///
    /// Shapes: `x[T×E]`, `delta[T×E]` (positive), `a[E×N]` (negative),
    /// `b[T×N]`, `c[T×N]`; output `[T×E]`. See [`crate::ssm::selective`].
    pub fn selective_scan(&mut self, x: Var, delta: Var, a: Var, b: Var, c: Var) -> Result<Var> {
        let (steps, channels) = self.dims2(x)?;
        let (_, states) = self.dims2(a)?;
        let dims = ScanDims {
            steps,
            channels,
            states,
        };
        let check = |g: &Self, v: Var, rows: usize, cols: usize| -> Result<()> {
            if g.values[v.0].dims2()? != (rows, cols) {
                return Err(Error::shape(
                    "selective_scan",
                    g.values[x.0].shape(),
                    g.values[v.0].shape(),
                ));
            }
            Ok(())
        };
        check(self, delta, steps, channels)?;
        check(self, a, channels, states)?;
        check(self, b, steps, states)?;
        check(self, c, steps, states)?;
        let (y, hidden) = selective::scan_forward(
            self.values[x.0].data(),
            self.values[delta.0].data(),
            self.values[a.0].data(),
            self.values[b.0].data(),
            self.values[c.0].data(),
            dims,
        )?;
        Ok(self.push(
            Tensor::matrix(steps, channels, y)?,
            Op::SelectiveScan {
                x: x.0,
                delta: delta.0,
                a: a.0,
                b: b.0,
                c: c.0,
                states: hidden,
                dims,
            },
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        let av = self.values[a.0].data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::Transpose(a.0)))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        if start + len > n {
            return Err(Error::shape("slice_cols", &[m, n], &[start, len]));
        }
        let av = self.values[a.0].data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&av[i * n + start..i * n + start + len]);
        }
        Ok(self.push(Tensor::matrix(m, len, out)?, Op::SliceCols { a: a.0, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let (m, _) = self.dims2(*first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = self.dims2(*p)?;
            if pm != m {
                return Err(Error::shape("concat_cols", &[m], &[pm]));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.values[p.0].data()[i * w..(i + 1) * w]);
            }
        }
        let idx = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::ConcatCols(idx)))
    }

    /// Rows of `a` selected (with repetition allowed) by `rows`.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        let av = self.values[a.0].data();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::shape("gather_rows", &[m, n], &[r]));
            }
            out.extend_from_slice(&av[r * n..(r + 1) * n]);
        }
        Ok(self.push(
            Tensor::matrix(rows.len(), n, out)?,
            Op::GatherRows {
                a: a.0,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let (_, n) = self.dims2(*first)?;
        let mut m = 0;
        let mut out = Vec::new();
        for p in parts {
            let (pm, pn) = self.dims2(*p)?;
            if pn != n {
                return Err(Error::shape("concat_rows", &[n], &[pn]));
            }
            m += pm;
            out.extend_from_slice(self.values[p.0].data());
        }
        let idx = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::ConcatRows(idx)))
    }

    /// Column means, `[m×n] → [1×n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        if m == 0 {
            return Err(Error::Contract("mean_rows of an empty tensor".into()));
        }
        let mut out = vec![0.0; n];
        for row in self.values[a.0].data().chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        Ok(self.push(Tensor::matrix(1, n, out)?, Op::MeanRows(a.0)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.values[a.0].clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(a.0)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values[a.0].data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    /// Mean Huber loss of `pred` against a constant `target`.
    pub fn huber(&mut self, pred: Var, target: &[f64], delta: f64) -> Result<Var> {
        if delta <= 0.0 {
            return Err(Error::Contract(format!("huber delta must be > 0, got {delta}")));
        }
        let pv = self.values[pred.0].data();
        if pv.len() != target.len() {
            return Err(Error::shape(
                "huber",
                self.values[pred.0].shape(),
                &[target.len()],
            ));
        }
        let loss = crate::train::loss::huber_loss(target, pv, delta);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Huber {
                pred: pred.0,
                target: target.to_vec(),
                delta,
            },
        ))
    }

    /// Populates `grad` for every node that requires one and is reachable
    /// from `loss`. Gradients from multiple consumers are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.values[loss.0].is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.requires_grad[i] {
                continue;
            }
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &gout);
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, gy: &[f64]) {
        let values = &self.values;
        let requires = &self.requires_grad;
        let grads = &mut self.grads;
        let mut acc = |idx: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !requires[idx] {
                return;
            }
            let g = grads[idx].get_or_insert_with(|| vec![0.0; values[idx].numel()]);
            f(g);
        };
        let out = &values[i];
        match &self.ops[i] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = values[*a].dims2().expect("2-D");
                let n = out.shape()[1];
                let (av, bv) = (values[*a].data(), values[*b].data());
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let grow = &gy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(g, b)| g * b).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let grow = &gy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, g) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * g;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for p in [*a, *b] {
                    acc(p, &mut |g| g.iter_mut().zip(gy).for_each(|(o, d)| *o += d));
                }
            }
            Op::AddRow(a, bias) => {
                acc(*a, &mut |g| g.iter_mut().zip(gy).for_each(|(o, d)| *o += d));
                let n = values[*bias].numel();
                acc(*bias, &mut |g| {
                    for row in gy.chunks(n) {
                        g.iter_mut().zip(row).for_each(|(o, d)| *o += d);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (values[*a].data(), values[*b].data());
                acc(*a, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += gy[j] * bv[j];
                    }
                });
                acc(*b, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += gy[j] * av[j];
                    }
                });
            }
            Op::Scale(a, s) => {
                acc(*a, &mut |g| g.iter_mut().zip(gy).for_each(|(o, d)| *o += s * d));
            }
            Op::Exp(a) => {
                let yv = out.data();
                acc(*a, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += gy[j] * yv[j];
                    }
                });
            }
            Op::Silu(a) => {
                let xv = values[*a].data();
                acc(*a, &mut |g| {
                    for j in 0..g.len() {
                        let s = sigmoid(xv[j]);
                        g[j] += gy[j] * s * (1.0 + xv[j] * (1.0 - s));
                    }
                });
            }
            Op::Softplus(a) => {
                let xv = values[*a].data();
                acc(*a, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += gy[j] * sigmoid(xv[j]);
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let n = out.shape()[1];
                let yv = out.data();
                acc(*a, &mut |g| {
                    for ((grow, yrow), dyrow) in g.chunks_mut(n).zip(yv.chunks(n)).zip(gy.chunks(n)) {
                        let dot: f64 = yrow.iter().zip(dyrow).map(|(y, d)| y * d).sum();
                        for j in 0..n {
                            grow[j] += yrow[j] * (dyrow[j] - dot);
                        }
                    }
                });
            }
            Op::CausalConv { x, kernel } => {
                let (t_len, d) = values[*x].dims2().expect("2-D");
                let w = values[*kernel].shape()[0];
                let (xv, kv) = (values[*x].data(), values[*kernel].data());
                acc(*x, &mut |g| {
                    for t in 0..t_len {
                        for tap in 0..w {
                            let Some(src) = (t + tap).checked_sub(w - 1) else {
                                continue;
                            };
                            for j in 0..d {
                                g[src * d + j] += kv[tap * d + j] * gy[t * d + j];
                            }
                        }
                    }
                });
                acc(*kernel, &mut |g| {
                    for t in 0..t_len {
                        for tap in 0..w {
                            let Some(src) = (t + tap).checked_sub(w - 1) else {
                                continue;
                            };
                            for j in 0..d {
                                g[tap * d + j] += xv[src * d + j] * gy[t * d + j];
                            }
                        }
                    }
                });
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (t_len, d) = values[*x].dims2().expect("2-D");
                let (xv, gv) = (values[*x].data(), values[*gain].data());
                acc(*x, &mut |g| {
                    for t in 0..t_len {
                        let r = inv_rms[t];
                        let row = t * d..(t + 1) * d;
                        let dot: f64 = xv[row.clone()]
                            .iter()
                            .zip(&gy[row.clone()])
                            .zip(gv)
                            .map(|((x, dy), g)| x * dy * g)
                            .sum();
                        let coef = r * r * r * dot / d as f64;
                        for j in 0..d {
                            g[t * d + j] += r * gv[j] * gy[t * d + j] - coef * xv[t * d + j];
                        }
                    }
                });
                acc(*gain, &mut |g| {
                    for t in 0..t_len {
                        for j in 0..d {
                            g[j] += gy[t * d + j] * xv[t * d + j] * inv_rms[t];
                        }
                    }
                });
            }
            Op::SelectiveScan {
                x,
                delta,
                a,
                b,
                c,
                states,
                dims,
            } => {
                let grads_in = selective::scan_backward(
                    gy,
                    values[*x].data(),
                    values[*delta].data(),
                    values[*a].data(),
                    values[*b].data(),
                    values[*c].data(),
                    states,
                    *dims,
                );
                for (idx, gin) in [
                    (*x, &grads_in.x),
                    (*delta, &grads_in.delta),
                    (*a, &grads_in.a),
                    (*b, &grads_in.b),
                    (*c, &grads_in.c),
                ] {
                    acc(idx, &mut |g| g.iter_mut().zip(gin).for_each(|(o, d)| *o += d));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = values[*a].dims2().expect("2-D");
                acc(*a, &mut |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += gy[j * m + i];
                        }
                    }
                });
            }
            Op::SliceCols { a, start } => {
                let (m, n) = values[*a].dims2().expect("2-D");
                let len = out.shape()[1];
                acc(*a, &mut |g| {
                    for i in 0..m {
                        for j in 0..len {
                            g[i * n + start + j] += gy[i * len + j];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (m, n) = out.dims2().expect("2-D");
                let mut offset = 0;
                for &p in parts {
                    let w = values[p].shape()[1];
                    acc(p, &mut |g| {
                        for i in 0..m {
                            for j in 0..w {
                                g[i * w + j] += gy[i * n + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::GatherRows { a, rows } => {
                let n = out.shape()[1];
                acc(*a, &mut |g| {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..n {
                            g[r * n + j] += gy[i * n + j];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = values[p].numel();
                    acc(p, &mut |g| {
                        g.iter_mut()
                            .zip(&gy[offset..offset + len])
                            .for_each(|(o, d)| *o += d)
                    });
                    offset += len;
                }
            }
            Op::MeanRows(a) => {
                let (m, n) = values[*a].dims2().expect("2-D");
                let inv = 1.0 / m as f64;
                acc(*a, &mut |g| {
                    for row in g.chunks_mut(n) {
                        row.iter_mut().zip(gy).for_each(|(o, d)| *o += d * inv);
                    }
                });
            }
            Op::Reshape(a) => {
                acc(*a, &mut |g| g.iter_mut().zip(gy).for_each(|(o, d)| *o += d));
            }
            Op::Sum(a) => {
                acc(*a, &mut |g| g.iter_mut().for_each(|o| *o += gy[0]));
            }
            Op::Huber {
                pred,
                target,
                delta,
            } => {
                let pv = values[*pred].data();
                let inv = gy[0] / target.len() as f64;
                acc(*pred, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += inv * crate::train::loss::huber_grad(pv[j] - target[j], *delta);
                    }
                });
            }
        }
    }
}
