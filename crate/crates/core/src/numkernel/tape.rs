//! Reverse-mode autodiff on a per-step Wengert tape.
//!
//! Ops are methods on [`Tape`]: they compute forward values and, while the
//! tape is recording and any input is tape-tracked, push a node holding the
//! parent ids and whatever the backward pass needs. Node ids are append-only,
//! so parents always precede children and a single reverse sweep computes
//! every gradient. A tape lives for one training step and is then dropped;
//! inference uses a non-recording tape through the same ops.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numkernel::linalg;
use crate::numkernel::rng::Rng;
use crate::numkernel::tensor::{ParamId, Tensor};

const LN_EPS: f64 = 1e-6;

type Src = Option<usize>;

#[derive(Debug, Clone, Copy)]
pub struct Conv1dSpec {
    pub c_in: usize,
    pub l_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
}

impl Conv1dSpec {
    pub fn l_out(&self) -> usize {
        let span = (self.k - 1) * self.dilation + 1;
        (self.l_in + 2 * self.pad - span) / self.stride + 1
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2dSpec {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub pad: usize,
}

enum Op {
    Leaf,
    Add { a: Src, b: Src },
    Sub { a: Src, b: Src },
    Mul { a: Src, b: Src, a_data: Vec<f64>, b_data: Vec<f64> },
    MulConst { a: Src, c_data: Vec<f64> },
    Scale { a: Src, c: f64 },
    AddScalar { a: Src },
    Relu { a: Src, x: Vec<f64> },
    Silu { a: Src, x: Vec<f64> },
    Sigmoid { a: Src, y: Vec<f64> },
    Tanh { a: Src, y: Vec<f64> },
    Abs { a: Src, x: Vec<f64> },
    SumAll { a: Src },
    MeanAll { a: Src, n: usize },
    MeanRows { a: Src, rows: usize, cols: usize },
    Reshape { a: Src },
    Transpose2d { a: Src, rows: usize, cols: usize },
    SliceCols { a: Src, start: usize, len: usize, rows: usize, in_cols: usize },
    ConcatCols { parts: Vec<(Src, usize)>, rows: usize },
    SliceFirst { a: Src, start: usize, len: usize, stride: usize },
    ConcatFirst { parts: Vec<(Src, usize)>, stride: usize },
    SoftmaxLast { a: Src, y: Vec<f64>, cols: usize },
    LayerNorm { a: Src, g: Src, b: Src, x_hat: Vec<f64>, rstd: Vec<f64>, gamma: Vec<f64>, cols: usize },
    CrossEntropy { a: Src, probs: Vec<f64>, targets: Vec<u32>, vocab: usize },
    CumsumLast { a: Src, cols: usize },
    GatherRows { t: Src, idx: Vec<u32>, cols: usize },
    Matmul { a: Src, b: Src, m: usize, k: usize, n: usize, a_data: Vec<f64>, b_data: Vec<f64> },
    Conv1d { x: Src, w: Src, b: Src, x_data: Vec<f64>, w_data: Vec<f64>, spec: Conv1dSpec },
    Conv2d { x: Src, w: Src, b: Src, x_data: Vec<f64>, w_data: Vec<f64>, spec: Conv2dSpec },
    Upsample1d { a: Src, c: usize, l: usize, factor: usize },
    Upsample2d { a: Src, c: usize, h: usize, w: usize, factor: usize },
    AddChannelBias { a: Src, b: Src, c: usize, rest: usize },
    StraightThrough { a: Src },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Per-step operation recorder.
pub struct Tape {
    recording: bool,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, usize>,
}

/// Result of a backward sweep; node-indexed cotangents plus the leaf map.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    param_nodes: HashMap<ParamId, usize>,
}

impl Gradients {
    /// d(loss)/d(param); zero tensor when the parameter is not an ancestor.
    pub fn for_param(&self, p: &Tensor) -> Tensor {
        let slot = p
            .param_id()
            .and_then(|id| self.param_nodes.get(&id))
            .and_then(|&n| self.grads[n].as_ref());
        match slot {
            Some(g) => Tensor::new(p.shape().to_vec(), g.clone()).expect("grad shape matches param"),
            None => Tensor::zeros(p.shape()),
        }
    }

    /// Gradient flowing into an intermediate tape tensor, if any reached it.
    pub fn for_intermediate(&self, t: &Tensor) -> Option<Tensor> {
        let n = t.node?;
        let g = self.grads[n].as_ref()?;
        Some(Tensor::new(t.shape().to_vec(), g.clone()).expect("grad shape matches tensor"))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { recording: true, nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    /// A tape that records nothing; ops only compute forward values.
    pub fn inference() -> Self {
        Tape { recording: false, nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tape handle of a tensor: its node if it was produced here, or its leaf
    /// registration (created on first sight) if it is a trainable parameter.
    fn src(&mut self, t: &Tensor) -> Src {
        if !self.recording {
            return None;
        }
        if let Some(n) = t.node {
            return Some(n);
        }
        if let Some(pid) = t.param_id() {
            if t.requires_grad() {
                if let Some(&n) = self.param_nodes.get(&pid) {
                    return Some(n);
                }
                let n = self.push(Op::Leaf, t.shape().to_vec());
                self.param_nodes.insert(pid, n);
                return Some(n);
            }
        }
        None
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> usize {
        self.nodes.push(Node { op, shape });
        self.nodes.len() - 1
    }

    /// Wraps `data` as the output of `op` when any source is tracked.
    fn emit(&mut self, shape: Vec<usize>, data: Vec<f64>, tracked: bool, op: impl FnOnce() -> Op) -> Tensor {
        let t = Tensor::new(shape.clone(), data).expect("op produced consistent shape");
        if self.recording && tracked {
            let n = self.push(op(), shape);
            t.with_node(n)
        } else {
            t
        }
    }

    // ── elementwise ─────────────────────────────────────────────────────

    fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::shape(op, format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::same_shape("add", a, b)?;
        let (sa, sb) = (self.src(a), self.src(b));
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        Ok(self.emit(a.shape().to_vec(), data, sa.is_some() || sb.is_some(), || Op::Add { a: sa, b: sb }))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::same_shape("sub", a, b)?;
        let (sa, sb) = (self.src(a), self.src(b));
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        Ok(self.emit(a.shape().to_vec(), data, sa.is_some() || sb.is_some(), || Op::Sub { a: sa, b: sb }))
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::same_shape("mul", a, b)?;
        let (sa, sb) = (self.src(a), self.src(b));
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let tracked = sa.is_some() || sb.is_some();
        Ok(self.emit(a.shape().to_vec(), data, tracked, || Op::Mul {
            a: sa,
            b: sb,
            a_data: a.data().to_vec(),
            b_data: b.data().to_vec(),
        }))
    }

    /// Elementwise multiply by a fixed coefficient vector (dropout masks,
    /// additive-mask complements, stochastic-depth gates).
    pub fn mul_const(&mut self, a: &Tensor, coeffs: &[f64]) -> Result<Tensor> {
        if coeffs.len() != a.numel() {
            return Err(Error::shape("mul_const", format!("{} coeffs vs {} elements", coeffs.len(), a.numel())));
        }
        let sa = self.src(a);
        let data = a.data().iter().zip(coeffs).map(|(x, c)| x * c).collect();
        Ok(self.emit(a.shape().to_vec(), data, sa.is_some(), || Op::MulConst { a: sa, c_data: coeffs.to_vec() }))
    }

    pub fn scale(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        let sa = self.src(a);
        let data = a.data().iter().map(|x| x * c).collect();
        Ok(self.emit(a.shape().to_vec(), data, sa.is_some(), || Op::Scale { a: sa, c }))
    }

    pub fn add_scalar(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        let sa = self.src(a);
        let data = a.data().iter().map(|x| x + c).collect();
        Ok(self.emit(a.shape().to_vec(), data, sa.is_some(), || Op::AddScalar { a: sa }))
    }

    pub fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        let sa = self.src(a);
        let data = a.data().iter().map(|&x| x.max(0.0)).collect();
        Ok(self.emit(a.shape().to_vec(), data, sa.is_some(), || Op::Relu { a: sa, x: a.data().to_vec() }))
    }

    pub fn silu(&mut self, a: &Tensor) -> Result<Tensor> {
        let sa = self.src(a);
        let data = a.data().iter().map(|&x| linalg::silu(x)).collect();
        Ok(self.emit(a.shape().to_vec(), data, sa.is_some(), || Op::Silu { a: sa, x: a.data().to_vec() }))
    }

    pub fn sigmoid(&mut self, a: &Tensor) -> Result<Tensor> {
        let sa = self.src(a);
        let data: Vec<f64> = a.data().iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        let y = data.clone();
        Ok(self.emit(a.shape().to_vec(), data, sa.is_some(), || Op::Sigmoid { a: sa, y }))
    }

    pub fn tanh(&mut self, a: &Tensor) -> Result<Tensor> {
        let sa = self.src(a);
        let data: Vec<f64> = a.data().iter().map(|&x| x.tanh()).collect();
        let y = data.clone();
        Ok(self.emit(a.shape().to_vec(), data, sa.is_some(), || Op::Tanh { a: sa, y }))
    }

    pub fn abs(&mut self, a: &Tensor) -> Result<Tensor> {
        let sa = self.src(a);
        let data = a.data().iter().map(|x| x.abs()).collect();
        Ok(self.emit(a.shape().to_vec(), data, sa.is_some(), || Op::Abs { a: sa, x: a.data().to_vec() }))
    }

    // ── reductions ──────────────────────────────────────────────────────

    pub fn sum_all(&mut self, a: &Tensor) -> Result<Tensor> {
        let sa = self.src(a);
        let s = a.data().iter().sum();
        Ok(self.emit(vec![1], vec![s], sa.is_some(), || Op::SumAll { a: sa }))
    }

    pub fn mean_all(&mut self, a: &Tensor) -> Result<Tensor> {
        let sa = self.src(a);
        let n = a.numel();
        let s = a.data().iter().sum::<f64>() / n as f64;
        Ok(self.emit(vec![1], vec![s], sa.is_some(), || Op::MeanAll { a: sa, n }))
    }

    /// Column means of a matrix: `[rows, cols] -> [cols]`.
    pub fn mean_rows(&mut self, a: &Tensor) -> Result<Tensor> {
        let (rows, cols) = a.dims2()?;
        let sa = self.src(a);
        let mut data = vec![0.0; cols];
        for r in 0..rows {
            for (d, v) in data.iter_mut().zip(&a.data()[r * cols..(r + 1) * cols]) {
                *d += v;
            }
        }
        data.iter_mut().for_each(|v| *v /= rows as f64);
        Ok(self.emit(vec![cols], data, sa.is_some(), || Op::MeanRows { a: sa, rows, cols }))
    }

    // ── shape ───────────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != a.numel() {
            return Err(Error::shape("reshape", format!("{:?} -> {:?}", a.shape(), shape)));
        }
        let sa = self.src(a);
        Ok(self.emit(shape, a.data().to_vec(), sa.is_some(), || Op::Reshape { a: sa }))
    }

    pub fn transpose2d(&mut self, a: &Tensor) -> Result<Tensor> {
        let (rows, cols) = a.dims2()?;
        let sa = self.src(a);
        let data = linalg::transpose(a.data(), rows, cols);
        Ok(self.emit(vec![cols, rows], data, sa.is_some(), || Op::Transpose2d { a: sa, rows, cols }))
    }

    pub fn slice_cols(&mut self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let (rows, in_cols) = a.dims2()?;
        if start + len > in_cols {
            return Err(Error::shape("slice_cols", format!("{start}..{} of {in_cols}", start + len)));
        }
        let sa = self.src(a);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&a.data()[r * in_cols + start..r * in_cols + start + len]);
        }
        Ok(self.emit(vec![rows, len], data, sa.is_some(), || Op::SliceCols { a: sa, start, len, rows, in_cols }))
    }

    pub fn concat_cols(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts.first().ok_or_else(|| Error::contract("concat_cols of nothing"))?.dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.dims2()?;
            if r != rows {
                return Err(Error::shape("concat_cols", format!("row counts differ: {rows} vs {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let srcs: Vec<(Src, usize)> =
            parts.iter().zip(&widths).map(|(p, &w)| (self.src(p), w)).collect();
        let tracked = srcs.iter().any(|(s, _)| s.is_some());
        Ok(self.emit(vec![rows, total], data, tracked, || Op::ConcatCols { parts: srcs, rows }))
    }

    /// Slice along the first axis; works for any rank.
    pub fn slice_first(&mut self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let first = a.shape()[0];
        if start + len > first {
            return Err(Error::shape("slice_first", format!("{start}..{} of {first}", start + len)));
        }
        let stride: usize = a.shape()[1..].iter().product::<usize>().max(1);
        let sa = self.src(a);
        let data = a.data()[start * stride..(start + len) * stride].to_vec();
        let mut shape = a.shape().to_vec();
        shape[0] = len;
        Ok(self.emit(shape, data, sa.is_some(), || Op::SliceFirst { a: sa, start, len, stride }))
    }

    /// Concatenate along the first axis; trailing dims must match.
    pub fn concat_first(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        let head = parts.first().ok_or_else(|| Error::contract("concat_first of nothing"))?;
        let tail = &head.shape()[1..];
        let stride: usize = tail.iter().product::<usize>().max(1);
        let mut firsts = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for p in parts {
            if &p.shape()[1..] != tail {
                return Err(Error::shape("concat_first", format!("{:?} vs {:?}", head.shape(), p.shape())));
            }
            firsts.push(p.shape()[0]);
            data.extend_from_slice(p.data());
        }
        let mut shape = head.shape().to_vec();
        shape[0] = firsts.iter().sum();
        let srcs: Vec<(Src, usize)> =
            parts.iter().zip(&firsts).map(|(p, &f)| (self.src(p), f)).collect();
        let tracked = srcs.iter().any(|(s, _)| s.is_some());
        Ok(self.emit(shape, data, tracked, || Op::ConcatFirst { parts: srcs, stride }))
    }

    // ── nn ──────────────────────────────────────────────────────────────

    pub fn softmax_last(&mut self, a: &Tensor) -> Result<Tensor> {
        let cols = *a.shape().last().ok_or_else(|| Error::contract("softmax of rank-0"))?;
        let sa = self.src(a);
        let mut data = a.data().to_vec();
        for row in data.chunks_mut(cols) {
            linalg::softmax_row(row);
        }
        let y = data.clone();
        Ok(self.emit(a.shape().to_vec(), data, sa.is_some(), || Op::SoftmaxLast { a: sa, y, cols }))
    }

    /// LayerNorm over the last axis with learnable gain and bias, ε = 1e-6.
    pub fn layer_norm(&mut self, a: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
        let cols = *a.shape().last().ok_or_else(|| Error::contract("layer_norm of rank-0"))?;
        if gamma.numel() != cols || beta.numel() != cols {
            return Err(Error::shape("layer_norm", format!("gain/bias {} vs width {cols}", gamma.numel())));
        }
        let rows = a.numel() / cols;
        let (sa, sg, sb) = (self.src(a), self.src(gamma), self.src(beta));
        let mut data = vec![0.0; a.numel()];
        let mut x_hat = vec![0.0; a.numel()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let x = &a.data()[r * cols..(r + 1) * cols];
            let out = &mut data[r * cols..(r + 1) * cols];
            let rs = linalg::layer_norm_row(x, gamma.data(), beta.data(), LN_EPS, out);
            rstd[r] = rs;
            let mean = x.iter().sum::<f64>() / cols as f64;
            for (xh, &xv) in x_hat[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *xh = (xv - mean) * rs;
            }
        }
        let tracked = sa.is_some() || sg.is_some() || sb.is_some();
        let gamma_data = gamma.data().to_vec();
        Ok(self.emit(a.shape().to_vec(), data, tracked, || Op::LayerNorm {
            a: sa,
            g: sg,
            b: sb,
            x_hat,
            rstd,
            gamma: gamma_data,
            cols,
        }))
    }

    /// Mean cross-entropy of logits `[n, vocab]` against integer targets.
    pub fn cross_entropy(&mut self, logits: &Tensor, targets: &[u32]) -> Result<Tensor> {
        let (n, vocab) = logits.dims2()?;
        if targets.len() != n {
            return Err(Error::shape("cross_entropy", format!("{n} rows vs {} targets", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::InvalidToken { token: t, vocab });
        }
        let sa = self.src(logits);
        let mut probs = logits.data().to_vec();
        for row in probs.chunks_mut(vocab) {
            linalg::softmax_row(row);
        }
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            loss -= probs[i * vocab + t as usize].max(1e-300).ln();
        }
        loss /= n as f64;
        let targets = targets.to_vec();
        Ok(self.emit(vec![1], vec![loss], sa.is_some(), || Op::CrossEntropy { a: sa, probs, targets, vocab }))
    }

    pub fn cumsum_last(&mut self, a: &Tensor) -> Result<Tensor> {
        let cols = *a.shape().last().ok_or_else(|| Error::contract("cumsum of rank-0"))?;
        let sa = self.src(a);
        let mut data = a.data().to_vec();
        for row in data.chunks_mut(cols) {
            for i in 1..cols {
                row[i] += row[i - 1];
            }
        }
        Ok(self.emit(a.shape().to_vec(), data, sa.is_some(), || Op::CumsumLast { a: sa, cols }))
    }

    /// Embedding lookup: rows of `table` at `idx`.
    pub fn gather_rows(&mut self, table: &Tensor, idx: &[u32]) -> Result<Tensor> {
        let (rows, cols) = table.dims2()?;
        if let Some(&i) = idx.iter().find(|&&i| i as usize >= rows) {
            return Err(Error::InvalidToken { token: i, vocab: rows });
        }
        let st = self.src(table);
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(&table.data()[i as usize * cols..(i as usize + 1) * cols]);
        }
        let idx = idx.to_vec();
        Ok(self.emit(vec![idx.len(), cols], data, st.is_some(), || Op::GatherRows { t: st, idx, cols }))
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = a.dims2()?;
        let (k2, n) = b.dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("lhs {:?} rhs {:?}", a.shape(), b.shape())));
        }
        let (sa, sb) = (self.src(a), self.src(b));
        let mut data = vec![0.0; m * n];
        linalg::matmul(a.data(), b.data(), m, k, n, &mut data);
        let tracked = sa.is_some() || sb.is_some();
        Ok(self.emit(vec![m, n], data, tracked, || Op::Matmul {
            a: sa,
            b: sb,
            m,
            k,
            n,
            a_data: a.data().to_vec(),
            b_data: b.data().to_vec(),
        }))
    }

    /// 1-D convolution over `[c_in, l]` with kernel `[c_out, c_in, k]`,
    /// zero padding, stride, and dilation.
    pub fn conv1d(
        &mut self,
        x: &Tensor,
        w: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        dilation: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let (c_in, l_in) = x.dims2()?;
        let ws = w.shape();
        if ws.len() != 3 || ws[1] != c_in {
            return Err(Error::shape("conv1d", format!("input {:?} kernel {:?}", x.shape(), ws)));
        }
        let spec = Conv1dSpec { c_in, l_in, c_out: ws[0], k: ws[2], stride, dilation, pad };
        let span = (spec.k - 1) * dilation + 1;
        if l_in + 2 * pad < span {
            return Err(Error::shape("conv1d", format!("length {l_in} shorter than receptive span {span}")));
        }
        let l_out = spec.l_out();
        let (sx, sw) = (self.src(x), self.src(w));
        let sb = bias.map(|b| self.src(b)).unwrap_or(None);
        let mut data = vec![0.0; spec.c_out * l_out];
        let xd = x.data();
        let wd = w.data();
        for co in 0..spec.c_out {
            let base = if let Some(b) = bias { b.data()[co] } else { 0.0 };
            for lo in 0..l_out {
                let mut acc = base;
                for ci in 0..c_in {
                    let xrow = &xd[ci * l_in..(ci + 1) * l_in];
                    let wrow = &wd[(co * c_in + ci) * spec.k..(co * c_in + ci + 1) * spec.k];
                    for (kk, &wv) in wrow.iter().enumerate() {
                        let pos = lo * stride + kk * dilation;
                        if pos >= pad && pos - pad < l_in {
                            acc += wv * xrow[pos - pad];
                        }
                    }
                }
                data[co * l_out + lo] = acc;
            }
        }
        let tracked = sx.is_some() || sw.is_some() || sb.is_some();
        Ok(self.emit(vec![spec.c_out, l_out], data, tracked, || Op::Conv1d {
            x: sx,
            w: sw,
            b: sb,
            x_data: xd.to_vec(),
            w_data: wd.to_vec(),
            spec,
        }))
    }

    /// 2-D convolution over `[c_in, h, w]` with square kernel
    /// `[c_out, c_in, k, k]`, zero padding, stride 1.
    pub fn conv2d(&mut self, x: &Tensor, w: &Tensor, bias: Option<&Tensor>, pad: usize) -> Result<Tensor> {
        let xs = x.shape();
        let ws = w.shape();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] {
            return Err(Error::shape("conv2d", format!("input {:?} kernel {:?}", xs, ws)));
        }
        let spec = Conv2dSpec { c_in: xs[0], h: xs[1], w: xs[2], c_out: ws[0], k: ws[2], pad };
        let (h_out, w_out) = (spec.h + 2 * pad + 1 - spec.k, spec.w + 2 * pad + 1 - spec.k);
        let (sx, sw) = (self.src(x), self.src(w));
        let sb = bias.map(|b| self.src(b)).unwrap_or(None);
        let mut data = vec![0.0; spec.c_out * h_out * w_out];
        let xd = x.data();
        let wd = w.data();
        for co in 0..spec.c_out {
            let base = if let Some(b) = bias { b.data()[co] } else { 0.0 };
            for ho in 0..h_out {
                for wo in 0..w_out {
                    let mut acc = base;
                    for ci in 0..spec.c_in {
                        for kh in 0..spec.k {
                            let hi = ho + kh;
                            if hi < pad || hi - pad >= spec.h {
                                continue;
                            }
                            let xrow = &xd[(ci * spec.h + hi - pad) * spec.w..];
                            let wrow = &wd[((co * spec.c_in + ci) * spec.k + kh) * spec.k..];
                            for kw in 0..spec.k {
                                let wi = wo + kw;
                                if wi >= pad && wi - pad < spec.w {
                                    acc += wrow[kw] * xrow[wi - pad];
                                }
                            }
                        }
                    }
                    data[(co * h_out + ho) * w_out + wo] = acc;
                }
            }
        }
        let tracked = sx.is_some() || sw.is_some() || sb.is_some();
        Ok(self.emit(vec![spec.c_out, h_out, w_out], data, tracked, || Op::Conv2d {
            x: sx,
            w: sw,
            b: sb,
            x_data: xd.to_vec(),
            w_data: wd.to_vec(),
            spec,
        }))
    }

    /// Nearest-neighbor upsampling of `[c, l]` by an integer factor.
    pub fn upsample_nearest_1d(&mut self, a: &Tensor, factor: usize) -> Result<Tensor> {
        let (c, l) = a.dims2()?;
        let sa = self.src(a);
        let mut data = Vec::with_capacity(c * l * factor);
        for ci in 0..c {
            for li in 0..l {
                let v = a.data()[ci * l + li];
                data.extend(std::iter::repeat(v).take(factor));
            }
        }
        Ok(self.emit(vec![c, l * factor], data, sa.is_some(), || Op::Upsample1d { a: sa, c, l, factor }))
    }

    /// Nearest-neighbor upsampling of `[c, h, w]` by an integer factor.
    pub fn upsample_nearest_2d(&mut self, a: &Tensor, factor: usize) -> Result<Tensor> {
        let s = a.shape();
        if s.len() != 3 {
            return Err(Error::shape("upsample_nearest_2d", format!("{s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let sa = self.src(a);
        let mut data = vec![0.0; c * h * factor * w * factor];
        for ci in 0..c {
            for hi in 0..h * factor {
                for wi in 0..w * factor {
                    data[(ci * h * factor + hi) * w * factor + wi] =
                        a.data()[(ci * h + hi / factor) * w + wi / factor];
                }
            }
        }
        Ok(self.emit(vec![c, h * factor, w * factor], data, sa.is_some(), || Op::Upsample2d {
            a: sa,
            c,
            h,
            w,
            factor,
        }))
    }

    /// Adds a per-channel bias to `[c, ...]` (broadcast over trailing dims).
    pub fn add_channel_bias(&mut self, a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let c = a.shape()[0];
        if bias.numel() != c {
            return Err(Error::shape("add_channel_bias", format!("{} channels vs {} biases", c, bias.numel())));
        }
        let rest = a.numel() / c;
        let (sa, sb) = (self.src(a), self.src(bias));
        let mut data = a.data().to_vec();
        for ci in 0..c {
            let b = bias.data()[ci];
            for v in &mut data[ci * rest..(ci + 1) * rest] {
                *v += b;
            }
        }
        let tracked = sa.is_some() || sb.is_some();
        Ok(self.emit(a.shape().to_vec(), data, tracked, || Op::AddChannelBias { a: sa, b: sb, c, rest }))
    }

    /// Replaces forward values with `quantized` while passing gradients
    /// through unchanged (straight-through estimator).
    pub fn straight_through(&mut self, a: &Tensor, quantized: Vec<f64>) -> Result<Tensor> {
        if quantized.len() != a.numel() {
            return Err(Error::shape("straight_through", format!("{} vs {}", quantized.len(), a.numel())));
        }
        let sa = self.src(a);
        Ok(self.emit(a.shape().to_vec(), quantized, sa.is_some(), || Op::StraightThrough { a: sa }))
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout(&mut self, a: &Tensor, p: f64, rng: &mut Rng) -> Result<Tensor> {
        if p == 0.0 {
            return Ok(a.clone());
        }
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout rate {p} outside [0, 1)")));
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> =
            (0..a.numel()).map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 }).collect();
        self.mul_const(a, &mask)
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Consumes nothing; the tape can be
    /// inspected afterwards but is normally dropped with the step.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if !loss.is_scalar() {
            return Err(Error::contract(format!("backward needs a scalar loss, got shape {:?}", loss.shape())));
        }
        let root = loss
            .node
            .ok_or_else(|| Error::contract("loss is not on this tape (no gradient path)"))?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            let Some(dz) = grads[id].take() else { continue };
            self.backprop_node(id, &dz, &mut grads);
            // Leaf gradients stay; re-store interior ones for introspection.
            grads[id] = Some(dz);
        }
        Ok(Gradients { grads, param_nodes: self.param_nodes.clone() })
    }

    fn backprop_node(&self, id: usize, dz: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        let acc = |grads: &mut Vec<Option<Vec<f64>>>, src: Src, f: &mut dyn FnMut(&mut [f64])| {
            if let Some(p) = src {
                let slot = grads[p].get_or_insert_with(|| vec![0.0; self.nodes[p].shape.iter().product()]);
                f(slot);
            }
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                acc(grads, *a, &mut |g| g.iter_mut().zip(dz).for_each(|(g, d)| *g += d));
                acc(grads, *b, &mut |g| g.iter_mut().zip(dz).for_each(|(g, d)| *g += d));
            }
            Op::Sub { a, b } => {
                acc(grads, *a, &mut |g| g.iter_mut().zip(dz).for_each(|(g, d)| *g += d));
                acc(grads, *b, &mut |g| g.iter_mut().zip(dz).for_each(|(g, d)| *g -= d));
            }
            Op::Mul { a, b, a_data, b_data } => {
                acc(grads, *a, &mut |g| {
                    g.iter_mut().zip(dz.iter().zip(b_data)).for_each(|(g, (d, bv))| *g += d * bv)
                });
                acc(grads, *b, &mut |g| {
                    g.iter_mut().zip(dz.iter().zip(a_data)).for_each(|(g, (d, av))| *g += d * av)
                });
            }
            Op::MulConst { a, c_data } => {
                acc(grads, *a, &mut |g| {
                    g.iter_mut().zip(dz.iter().zip(c_data)).for_each(|(g, (d, c))| *g += d * c)
                });
            }
            Op::Scale { a, c } => {
                acc(grads, *a, &mut |g| g.iter_mut().zip(dz).for_each(|(g, d)| *g += d * c));
            }
            Op::AddScalar { a } => {
                acc(grads, *a, &mut |g| g.iter_mut().zip(dz).for_each(|(g, d)| *g += d));
            }
            Op::Relu { a, x } => {
                acc(grads, *a, &mut |g| {
                    g.iter_mut()
                        .zip(dz.iter().zip(x))
                        .for_each(|(g, (d, &xv))| *g += if xv > 0.0 { *d } else { 0.0 })
                });
            }
            Op::Silu { a, x } => {
                acc(grads, *a, &mut |g| {
                    g.iter_mut().zip(dz.iter().zip(x)).for_each(|(g, (d, &xv))| {
                        let s = 1.0 / (1.0 + (-xv).exp());
                        *g += d * s * (1.0 + xv * (1.0 - s));
                    })
                });
            }
            Op::Sigmoid { a, y } => {
                acc(grads, *a, &mut |g| {
                    g.iter_mut().zip(dz.iter().zip(y)).for_each(|(g, (d, &yv))| *g += d * yv * (1.0 - yv))
                });
            }
            Op::Tanh { a, y } => {
                acc(grads, *a, &mut |g| {
                    g.iter_mut().zip(dz.iter().zip(y)).for_each(|(g, (d, &yv))| *g += d * (1.0 - yv * yv))
                });
            }
            Op::Abs { a, x } => {
                acc(grads, *a, &mut |g| {
                    g.iter_mut().zip(dz.iter().zip(x)).for_each(|(g, (d, &xv))| *g += d * xv.signum_or_zero())
                });
            }
            Op::SumAll { a } => {
                acc(grads, *a, &mut |g| g.iter_mut().for_each(|g| *g += dz[0]));
            }
            Op::MeanAll { a, n } => {
                let d = dz[0] / *n as f64;
                acc(grads, *a, &mut |g| g.iter_mut().for_each(|g| *g += d));
            }
            Op::MeanRows { a, rows, cols } => {
                let inv = 1.0 / *rows as f64;
                acc(grads, *a, &mut |g| {
                    for r in 0..*rows {
                        for (gv, d) in g[r * cols..(r + 1) * cols].iter_mut().zip(dz) {
                            *gv += d * inv;
                        }
                    }
                });
            }
            Op::Reshape { a } => {
                acc(grads, *a, &mut |g| g.iter_mut().zip(dz).for_each(|(g, d)| *g += d));
            }
            Op::Transpose2d { a, rows, cols } => {
                // dz has shape [cols, rows]; scatter back transposed.
                acc(grads, *a, &mut |g| {
                    for i in 0..*rows {
                        for j in 0..*cols {
                            g[i * cols + j] += dz[j * rows + i];
                        }
                    }
                });
            }
            Op::SliceCols { a, start, len, rows, in_cols } => {
                acc(grads, *a, &mut |g| {
                    for r in 0..*rows {
                        for j in 0..*len {
                            g[r * in_cols + start + j] += dz[r * len + j];
                        }
                    }
                });
            }
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|(_, w)| w).sum();
                let mut offset = 0;
                for (src, w) in parts {
                    acc(grads, *src, &mut |g| {
                        for r in 0..*rows {
                            for j in 0..*w {
                                g[r * w + j] += dz[r * total + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceFirst { a, start, len, stride } => {
                acc(grads, *a, &mut |g| {
                    g[start * stride..(start + len) * stride]
                        .iter_mut()
                        .zip(dz)
                        .for_each(|(g, d)| *g += d);
                });
            }
            Op::ConcatFirst { parts, stride } => {
                let mut offset = 0;
                for (src, f) in parts {
                    let n = f * stride;
                    acc(grads, *src, &mut |g| {
                        g.iter_mut().zip(&dz[offset..offset + n]).for_each(|(g, d)| *g += d);
                    });
                    offset += n;
                }
            }
            Op::SoftmaxLast { a, y, cols } => {
                acc(grads, *a, &mut |g| {
                    for r in 0..y.len() / cols {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let dzr = &dz[r * cols..(r + 1) * cols];
                        let s: f64 = yr.iter().zip(dzr).map(|(p, d)| p * d).sum();
                        for ((g, &p), &d) in g[r * cols..(r + 1) * cols].iter_mut().zip(yr).zip(dzr) {
                            *g += p * (d - s);
                        }
                    }
                });
            }
            Op::LayerNorm { a, g: gs, b: bs, x_hat, rstd, gamma, cols } => {
                let rows = x_hat.len() / cols;
                acc(grads, *bs, &mut |g| {
                    for r in 0..rows {
                        for (gv, d) in g.iter_mut().zip(&dz[r * cols..(r + 1) * cols]) {
                            *gv += d;
                        }
                    }
                });
                acc(grads, *gs, &mut |g| {
                    for r in 0..rows {
                        for j in 0..*cols {
                            g[j] += dz[r * cols + j] * x_hat[r * cols + j];
                        }
                    }
                });
                acc(grads, *a, &mut |g| {
                    for r in 0..rows {
                        let xh = &x_hat[r * cols..(r + 1) * cols];
                        let dzr = &dz[r * cols..(r + 1) * cols];
                        let n = *cols as f64;
                        let mut mean_g = 0.0;
                        let mut mean_gx = 0.0;
                        for j in 0..*cols {
                            let gj = dzr[j] * gamma[j];
                            mean_g += gj;
                            mean_gx += gj * xh[j];
                        }
                        mean_g /= n;
                        mean_gx /= n;
                        for j in 0..*cols {
                            let gj = dzr[j] * gamma[j];
                            g[r * cols + j] += rstd[r] * (gj - mean_g - xh[j] * mean_gx);
                        }
                    }
                });
            }
            Op::CrossEntropy { a, probs, targets, vocab } => {
                let n = targets.len();
                let d = dz[0] / n as f64;
                acc(grads, *a, &mut |g| {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..*vocab {
                            let onehot = if j == t as usize { 1.0 } else { 0.0 };
                            g[i * vocab + j] += d * (probs[i * vocab + j] - onehot);
                        }
                    }
                });
            }
            Op::CumsumLast { a, cols } => {
                acc(grads, *a, &mut |g| {
                    for r in 0..dz.len() / cols {
                        let dzr = &dz[r * cols..(r + 1) * cols];
                        let mut suffix = 0.0;
                        for j in (0..*cols).rev() {
                            suffix += dzr[j];
                            g[r * cols + j] += suffix;
                        }
                    }
                });
            }
            Op::GatherRows { t, idx, cols } => {
                acc(grads, *t, &mut |g| {
                    for (i, &row) in idx.iter().enumerate() {
                        let dst = &mut g[row as usize * cols..(row as usize + 1) * cols];
                        for (gv, d) in dst.iter_mut().zip(&dz[i * cols..(i + 1) * cols]) {
                            *gv += d;
                        }
                    }
                });
            }
            Op::Matmul { a, b, m, k, n, a_data, b_data } => {
                acc(grads, *a, &mut |g| linalg::matmul_a_bt_acc(dz, b_data, *m, *n, *k, g));
                acc(grads, *b, &mut |g| linalg::matmul_at_b_acc(a_data, dz, *m, *k, *n, g));
            }
            Op::Conv1d { x, w, b, x_data, w_data, spec } => {
                let l_out = spec.l_out();
                acc(grads, *b, &mut |g| {
                    for co in 0..spec.c_out {
                        g[co] += dz[co * l_out..(co + 1) * l_out].iter().sum::<f64>();
                    }
                });
                acc(grads, *w, &mut |g| {
                    for co in 0..spec.c_out {
                        for lo in 0..l_out {
                            let d = dz[co * l_out + lo];
                            if d == 0.0 {
                                continue;
                            }
                            for ci in 0..spec.c_in {
                                for kk in 0..spec.k {
                                    let pos = lo * spec.stride + kk * spec.dilation;
                                    if pos >= spec.pad && pos - spec.pad < spec.l_in {
                                        g[(co * spec.c_in + ci) * spec.k + kk] +=
                                            d * x_data[ci * spec.l_in + pos - spec.pad];
                                    }
                                }
                            }
                        }
                    }
                });
                acc(grads, *x, &mut |g| {
                    for co in 0..spec.c_out {
                        for lo in 0..l_out {
                            let d = dz[co * l_out + lo];
                            if d == 0.0 {
                                continue;
                            }
                            for ci in 0..spec.c_in {
                                for kk in 0..spec.k {
                                    let pos = lo * spec.stride + kk * spec.dilation;
                                    if pos >= spec.pad && pos - spec.pad < spec.l_in {
                                        g[ci * spec.l_in + pos - spec.pad] +=
                                            d * w_data[(co * spec.c_in + ci) * spec.k + kk];
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, x_data, w_data, spec } => {
                let h_out = spec.h + 2 * spec.pad + 1 - spec.k;
                let w_out = spec.w + 2 * spec.pad + 1 - spec.k;
                acc(grads, *b, &mut |g| {
                    for co in 0..spec.c_out {
                        g[co] += dz[co * h_out * w_out..(co + 1) * h_out * w_out].iter().sum::<f64>();
                    }
                });
                let scatter = |g: &mut [f64], weights: bool| {
                    for co in 0..spec.c_out {
                        for ho in 0..h_out {
                            for wo in 0..w_out {
                                let d = dz[(co * h_out + ho) * w_out + wo];
                                if d == 0.0 {
                                    continue;
                                }
                                for ci in 0..spec.c_in {
                                    for kh in 0..spec.k {
                                        let hi = ho + kh;
                                        if hi < spec.pad || hi - spec.pad >= spec.h {
                                            continue;
                                        }
                                        for kw in 0..spec.k {
                                            let wi = wo + kw;
                                            if wi < spec.pad || wi - spec.pad >= spec.w {
                                                continue;
                                            }
                                            let xi = (ci * spec.h + hi - spec.pad) * spec.w + wi - spec.pad;
                                            let wid = ((co * spec.c_in + ci) * spec.k + kh) * spec.k + kw;
                                            if weights {
                                                g[wid] += d * x_data[xi];
                                            } else {
                                                g[xi] += d * w_data[wid];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                };
                acc(grads, *w, &mut |g| scatter(g, true));
                acc(grads, *x, &mut |g| scatter(g, false));
            }
            Op::Upsample1d { a, c, l, factor } => {
                acc(grads, *a, &mut |g| {
                    for ci in 0..*c {
                        for li in 0..*l {
                            let base = ci * l * factor + li * factor;
                            g[ci * l + li] += dz[base..base + factor].iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::Upsample2d { a, c, h, w, factor } => {
                acc(grads, *a, &mut |g| {
                    let (hf, wf) = (h * factor, w * factor);
                    for ci in 0..*c {
                        for hi in 0..hf {
                            for wi in 0..wf {
                                g[(ci * h + hi / factor) * w + wi / factor] +=
                                    dz[(ci * hf + hi) * wf + wi];
                            }
                        }
                    }
                });
            }
            Op::AddChannelBias { a, b, c, rest } => {
                acc(grads, *a, &mut |g| g.iter_mut().zip(dz).for_each(|(g, d)| *g += d));
                acc(grads, *b, &mut |g| {
                    for ci in 0..*c {
                        g[ci] += dz[ci * rest..(ci + 1) * rest].iter().sum::<f64>();
                    }
                });
            }
            Op::StraightThrough { a } => {
                acc(grads, *a, &mut |g| g.iter_mut().zip(dz).for_each(|(g, d)| *g += d));
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}
