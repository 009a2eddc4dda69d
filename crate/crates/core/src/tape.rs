//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends one node whose inputs already live on the tape, so the
//! node order is a topological order and the backward pass is a single
//! reverse sweep. A tape records one forward pass and supports one backward
//! pass.

use crate::error::{Error, Result};
use crate::memory;
use crate::real::Real;
use crate::tensor::{split_axis, Tensor};

/// Handle to a value recorded on a [`Tape`].
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
    Linear { x: Var, w: Var, b: Var },
    MatVec { m: Var, v: Var },
    Conv1d { x: Var, k: Var, b: Var },
    Conv2d { x: Var, k: Var, b: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var },
    Silu(Var),
    Tanh(Var),
    Flip { x: Var, axis: usize },
    Mean { x: Var, axis: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ChannelBias { x: Var, b: Var },
    Reshape(Var),
    SwapLast2(Var),
    Sum(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
    /// Depends on a leaf recorded with [`Tape::input`].
    data: bool,
    /// Values saved for the backward rule (normalized rows, probabilities, ...).
    saved: Vec<T>,
}

/// Recorded forward computation.
#[derive(Debug)]
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    flops: u64,
    data_flops: u64,
    bytes: usize,
    consumed: bool,
}

/// Gradients of a scalar loss with respect to the leaves that requested them.
#[derive(Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of `shape` if the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Drop for Tape<T> {
    fn drop(&mut self) {
        memory::release(self.bytes);
    }
}

fn expect_shape(op: &'static str, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(Error::shape(op, format!("expected {want:?}, got {got:?}")));
    }
    Ok(())
}

fn expect_ndim(op: &'static str, t: &[usize], ndim: usize) -> Result<()> {
    if t.len() != ndim {
        return Err(Error::shape(op, format!("expected rank {ndim}, got {t:?}")));
    }
    Ok(())
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            flops: 0,
            data_flops: 0,
            bytes: 0,
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-add count accumulated by the ops recorded so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    /// The part of [`Tape::flops`] spent in ops that depend on an input leaf.
    /// Work on parameters alone is excluded.
    pub fn data_flops(&self) -> u64 {
        self.data_flops
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true, false)
    }

    /// Records a leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_leaf(value, requires_grad, false)
    }

    /// Records a data leaf: no gradient, and ops downstream of it count
    /// towards [`Tape::data_flops`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false, true)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool, data: bool) -> Var {
        self.account(value.nbytes());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            data,
            saved: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    fn account(&mut self, bytes: usize) {
        self.bytes += bytes;
        memory::acquire(bytes);
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        op: Op,
        inputs: &[Var],
        saved: Vec<T>,
        flops: u64,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let data = inputs.iter().any(|v| self.nodes[v.0].data);
        self.flops += flops;
        if data {
            self.data_flops += flops;
        }
        self.account(value.nbytes() + saved.len() * T::DTYPE.size());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            data,
            saved,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `x · w + b` for `x: [N, Din]`, `w: [Din, Dout]`, `b: [Dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        expect_ndim("linear", xs, 2)?;
        expect_ndim("linear", ws, 2)?;
        let (n, din, dout) = (xs[0], xs[1], ws[1]);
        if ws[0] != din {
            return Err(Error::shape(
                "linear",
                format!("input {xs:?} incompatible with weight {ws:?}"),
            ));
        }
        expect_shape("linear", bs, &[dout])?;
        let (xd, wd, bd) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = Vec::with_capacity(n * dout);
        for row in xd.chunks_exact(din) {
            let mut acc = bd.to_vec();
            for (i, &xi) in row.iter().enumerate() {
                let wrow = &wd[i * dout..(i + 1) * dout];
                for (a, &wv) in acc.iter_mut().zip(wrow) {
                    *a = *a + xi * wv;
                }
            }
            out.extend_from_slice(&acc);
        }
        let value = Tensor::new(&[n, dout], out)?;
        self.push(
            "linear",
            value,
            Op::Linear { x, w, b },
            &[x, w, b],
            Vec::new(),
            (n * din * dout) as u64,
        )
    }

    /// `m · v` for `m: [R, C]`, `v: [C]`.
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (ms, vs) = (self.shape(m), self.shape(v));
        expect_ndim("matvec", ms, 2)?;
        let (r, c) = (ms[0], ms[1]);
        expect_shape("matvec", vs, &[c])?;
        let (md, vd) = (self.value(m).data(), self.value(v).data());
        let out: Vec<T> = md
            .chunks_exact(c)
            .map(|row| row.iter().zip(vd).fold(T::zero(), |a, (&p, &q)| a + p * q))
            .collect();
        let value = Tensor::new(&[r], out)?;
        self.push(
            "matvec",
            value,
            Op::MatVec { m, v },
            &[m, v],
            Vec::new(),
            (r * c) as u64,
        )
    }

    /// Dense 1-D convolution, kernel length 3, zero padding 1, stride 1.
    /// `x: [N, Cin, L]`, `k: [Cout, Cin, 3]`, `b: [Cout]`.
    pub fn conv1d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (xs, ks, bs) = (self.shape(x), self.shape(k), self.shape(b));
        expect_ndim("conv1d", xs, 3)?;
        expect_ndim("conv1d", ks, 3)?;
        let (n, cin, len) = (xs[0], xs[1], xs[2]);
        let cout = ks[0];
        if ks[1] != cin || ks[2] != 3 {
            return Err(Error::shape(
                "conv1d",
                format!("kernel {ks:?} incompatible with input {xs:?}"),
            ));
        }
        expect_shape("conv1d", bs, &[cout])?;
        let (xd, kd, bd) = (
            self.value(x).data(),
            self.value(k).data(),
            self.value(b).data(),
        );
        let mut out = vec![T::zero(); n * cout * len];
        for s in 0..n {
            for o in 0..cout {
                let dst = &mut out[(s * cout + o) * len..(s * cout + o + 1) * len];
                dst.iter_mut().for_each(|v| *v = bd[o]);
                for c in 0..cin {
                    let src = &xd[(s * cin + c) * len..(s * cin + c + 1) * len];
                    let kk = &kd[(o * cin + c) * 3..(o * cin + c) * 3 + 3];
                    for t in 0..len {
                        let mut acc = kk[1] * src[t];
                        if t > 0 {
                            acc = acc + kk[0] * src[t - 1];
                        }
                        if t + 1 < len {
                            acc = acc + kk[2] * src[t + 1];
                        }
                        dst[t] = dst[t] + acc;
                    }
                }
            }
        }
        let value = Tensor::new(&[n, cout, len], out)?;
        self.push(
            "conv1d",
            value,
            Op::Conv1d { x, k, b },
            &[x, k, b],
            Vec::new(),
            (n * cout * cin * 3 * len) as u64,
        )
    }

    /// Dense 2-D convolution, 3×3 kernel, zero padding 1, stride 1.
    /// `x: [N, Cin, H, W]`, `k: [Cout, Cin, 3, 3]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (xs, ks, bs) = (self.shape(x), self.shape(k), self.shape(b));
        expect_ndim("conv2d", xs, 4)?;
        expect_ndim("conv2d", ks, 4)?;
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ks[0];
        if ks[1] != cin || ks[2] != 3 || ks[3] != 3 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {ks:?} incompatible with input {xs:?}"),
            ));
        }
        expect_shape("conv2d", bs, &[cout])?;
        let (xd, kd, bd) = (
            self.value(x).data(),
            self.value(k).data(),
            self.value(b).data(),
        );
        let mut out = vec![T::zero(); n * cout * h * w];
        for s in 0..n {
            for o in 0..cout {
                let base = (s * cout + o) * h * w;
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = bd[o];
                        for c in 0..cin {
                            let xb = (s * cin + c) * h * w;
                            let kb = (o * cin + c) * 9;
                            for (di, dj, ii, jj) in taps(i, j, h, w) {
                                acc = acc + kd[kb + di * 3 + dj] * xd[xb + ii * w + jj];
                            }
                        }
                        out[base + i * w + j] = acc;
                    }
                }
            }
        }
        let value = Tensor::new(&[n, cout, h, w], out)?;
        self.push(
            "conv2d",
            value,
            Op::Conv2d { x, k, b },
            &[x, k, b],
            Vec::new(),
            (n * cout * cin * 9 * h * w) as u64,
        )
    }

    /// Row-wise layer normalization of `x: [N, F]` followed by the affine
    /// map `gamma ⊙ x̂ + beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x);
        expect_ndim("layernorm", xs, 2)?;
        let (n, f) = (xs[0], xs[1]);
        expect_shape("layernorm", self.shape(gamma), &[f])?;
        expect_shape("layernorm", self.shape(beta), &[f])?;
        if eps <= 0.0 {
            return Err(Error::config("layernorm eps must be positive"));
        }
        let eps = T::from_f64(eps);
        let (xd, gd, bd) = (
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let ft = T::from_f64(f as f64);
        let mut out = Vec::with_capacity(n * f);
        // saved layout: x̂ (n·f values) then rstd (n values)
        let mut saved = Vec::with_capacity(n * f + n);
        let mut rstds = Vec::with_capacity(n);
        for row in xd.chunks_exact(f) {
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / ft;
            let var = row
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                / ft;
            let rstd = T::one() / (var + eps).sqrt();
            for ((&v, &g), &bb) in row.iter().zip(gd).zip(bd) {
                let xhat = (v - mean) * rstd;
                saved.push(xhat);
                out.push(g * xhat + bb);
            }
            rstds.push(rstd);
        }
        saved.extend(rstds);
        let value = Tensor::new(&[n, f], out)?;
        self.push(
            "layernorm",
            value,
            Op::LayerNorm { x, gamma, beta },
            &[x, gamma, beta],
            saved,
            (3 * n * f) as u64,
        )
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v * sigmoid(v));
        let flops = value.numel() as u64;
        self.push("silu", value, Op::Silu(x), &[x], Vec::new(), flops)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.tanh());
        let flops = value.numel() as u64;
        self.push("tanh", value, Op::Tanh(x), &[x], Vec::new(), flops)
    }

    /// Reverses `x` along `axis`. Negative axes count from the end.
    pub fn flip(&mut self, x: Var, axis: isize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let axis = resolve_axis("flip", &shape, axis)?;
        let value = Tensor::new(&shape, flip_data(self.value(x).data(), &shape, axis))?;
        self.push("flip", value, Op::Flip { x, axis }, &[x], Vec::new(), 0)
    }

    /// Mean over `axis`; the axis is removed from the output shape.
    pub fn mean(&mut self, x: Var, axis: isize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let axis = resolve_axis("mean", &shape, axis)?;
        let (outer, ext, inner) = split_axis(&shape, axis);
        let xd = self.value(x).data();
        let scale = T::one() / T::from_f64(ext as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for e in 0..ext {
                let src = &xd[(o * ext + e) * inner..(o * ext + e + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * scale);
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != axis)
            .map(|(_, &d)| d)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let value = Tensor::new(&out_shape, out)?;
        let flops = self.value(x).numel() as u64;
        self.push("mean", value, Op::Mean { x, axis }, &[x], Vec::new(), flops)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        expect_shape("add", self.shape(b), self.shape(a))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let flops = value.numel() as u64;
        self.push("add", value, Op::Add(a, b), &[a, b], Vec::new(), flops)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        expect_shape("mul", self.shape(b), self.shape(a))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p * q)
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let flops = value.numel() as u64;
        self.push("mul", value, Op::Mul(a, b), &[a, b], Vec::new(), flops)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f = T::from_f64(factor);
        let value = self.value(x).map(|v| v * f);
        let flops = value.numel() as u64;
        self.push("scale", value, Op::Scale(x, factor), &[x], Vec::new(), flops)
    }

    /// Adds `b[c]` to every element of channel `c` of `x: [N, C, ...]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::shape("channel_bias", format!("rank < 2: {xs:?}")));
        }
        expect_shape("channel_bias", self.shape(b), &[xs[1]])?;
        let (outer, ch, inner) = split_axis(&xs, 1);
        let (xd, bd) = (self.value(x).data(), self.value(b).data());
        let mut out = Vec::with_capacity(xd.len());
        for o in 0..outer {
            for (c, &bv) in bd.iter().enumerate().take(ch) {
                let start = (o * ch + c) * inner;
                out.extend(xd[start..start + inner].iter().map(|&v| v + bv));
            }
        }
        let value = Tensor::new(&xs, out)?;
        let flops = value.numel() as u64;
        self.push(
            "channel_bias",
            value,
            Op::ChannelBias { x, b },
            &[x, b],
            Vec::new(),
            flops,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x], Vec::new(), 0)
    }

    /// Swaps the last two axes.
    pub fn swap_last2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("swap_last2", format!("rank < 2: {shape:?}")));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let mut out_shape = shape.clone();
        let nd = out_shape.len();
        out_shape.swap(nd - 2, nd - 1);
        let value = Tensor::new(&out_shape, transpose_blocks(self.value(x).data(), r, c))?;
        self.push("swap_last2", value, Op::SwapLast2(x), &[x], Vec::new(), 0)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self
            .value(x)
            .data()
            .iter()
            .fold(T::zero(), |a, &v| a + v);
        let flops = self.value(x).numel() as u64;
        self.push("sum", Tensor::scalar(total), Op::Sum(x), &[x], Vec::new(), flops)
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits);
        expect_ndim("softmax_cross_entropy", ls, 2)?;
        let (n, k) = (ls[0], ls[1]);
        if labels.len() != n {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} labels for {n} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: k,
            });
        }
        let ld = self.value(logits).data();
        let mut probs = Vec::with_capacity(n * k);
        let mut total = T::zero();
        for (row, &label) in ld.chunks_exact(k).zip(labels) {
            let max = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
            let sum = row.iter().fold(T::zero(), |a, &v| a + (v - max).exp());
            let lse = max + sum.ln();
            total = total + (lse - row[label]);
            probs.extend(row.iter().map(|&v| (v - max).exp() / sum));
        }
        let loss = total / T::from_f64(n as f64);
        self.push(
            "softmax_cross_entropy",
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            &[logits],
            probs,
            (2 * n * k) as u64,
        )
    }

    /// Back-propagates from the scalar `loss` and returns gradients for
    /// every leaf that requires them. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Grads<T>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let loss_shape = self.shape(loss).to_vec();
        if !self.value(loss).is_scalar() {
            return Err(Error::NotScalar(loss_shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            memory::acquire(g.len() * T::DTYPE.size());
            self.backprop_node(idx, &g, &mut grads)?;
            memory::release(g.len() * T::DTYPE.size());
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                match (g, &node.op) {
                    (Some(g), Op::Leaf) if node.requires_grad => {
                        Tensor::new(node.value.shape(), g).ok()
                    }
                    _ => None,
                }
            })
            .collect();
        Ok(Grads { grads })
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let want = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (n, din, dout) = (xs[0], xs[1], ws[1]);
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                if want(*x) {
                    let mut gx = vec![T::zero(); n * din];
                    for s in 0..n {
                        let gr = &g[s * dout..(s + 1) * dout];
                        for i in 0..din {
                            let wr = &wd[i * dout..(i + 1) * dout];
                            gx[s * din + i] =
                                gr.iter().zip(wr).fold(T::zero(), |a, (&p, &q)| a + p * q);
                        }
                    }
                    accumulate(grads, *x, gx);
                }
                if want(*w) {
                    let mut gw = vec![T::zero(); din * dout];
                    for s in 0..n {
                        let gr = &g[s * dout..(s + 1) * dout];
                        for i in 0..din {
                            let xi = xd[s * din + i];
                            let dst = &mut gw[i * dout..(i + 1) * dout];
                            for (d, &gv) in dst.iter_mut().zip(gr) {
                                *d = *d + xi * gv;
                            }
                        }
                    }
                    accumulate(grads, *w, gw);
                }
                if want(*b) {
                    let mut gb = vec![T::zero(); dout];
                    for gr in g.chunks_exact(dout) {
                        for (d, &gv) in gb.iter_mut().zip(gr) {
                            *d = *d + gv;
                        }
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::MatVec { m, v } => {
                let ms = self.shape(*m);
                let (r, c) = (ms[0], ms[1]);
                let (md, vd) = (self.value(*m).data(), self.value(*v).data());
                if want(*m) {
                    let mut gm = Vec::with_capacity(r * c);
                    for &gr in g.iter().take(r) {
                        gm.extend(vd.iter().map(|&q| gr * q));
                    }
                    accumulate(grads, *m, gm);
                }
                if want(*v) {
                    let mut gv = vec![T::zero(); c];
                    for (row, &gr) in md.chunks_exact(c).zip(g) {
                        for (d, &mv) in gv.iter_mut().zip(row) {
                            *d = *d + gr * mv;
                        }
                    }
                    accumulate(grads, *v, gv);
                }
            }
            Op::Conv1d { x, k, b } => {
                let (xs, ks) = (self.shape(*x), self.shape(*k));
                let (n, cin, len, cout) = (xs[0], xs[1], xs[2], ks[0]);
                let (xd, kd) = (self.value(*x).data(), self.value(*k).data());
                let (wx, wk) = (want(*x), want(*k));
                let mut gx = if wx { vec![T::zero(); xd.len()] } else { Vec::new() };
                let mut gk = if wk { vec![T::zero(); kd.len()] } else { Vec::new() };
                for s in 0..n {
                    for o in 0..cout {
                        let go = &g[(s * cout + o) * len..(s * cout + o + 1) * len];
                        for c in 0..cin {
                            let xo = (s * cin + c) * len;
                            let ko = (o * cin + c) * 3;
                            for (t, &gv) in go.iter().enumerate() {
                                for j in 0..3 {
                                    let pos = t + j;
                                    if pos == 0 || pos > len {
                                        continue;
                                    }
                                    let src = pos - 1;
                                    if wx {
                                        gx[xo + src] = gx[xo + src] + gv * kd[ko + j];
                                    }
                                    if wk {
                                        gk[ko + j] = gk[ko + j] + gv * xd[xo + src];
                                    }
                                }
                            }
                        }
                    }
                }
                if wx {
                    accumulate(grads, *x, gx);
                }
                if wk {
                    accumulate(grads, *k, gk);
                }
                if want(*b) {
                    accumulate(grads, *b, channel_sums(g, n, cout, len));
                }
            }
            Op::Conv2d { x, k, b } => {
                let (xs, ks) = (self.shape(*x), self.shape(*k));
                let (n, cin, h, w, cout) = (xs[0], xs[1], xs[2], xs[3], ks[0]);
                let (xd, kd) = (self.value(*x).data(), self.value(*k).data());
                let (wx, wk) = (want(*x), want(*k));
                let mut gx = if wx { vec![T::zero(); xd.len()] } else { Vec::new() };
                let mut gk = if wk { vec![T::zero(); kd.len()] } else { Vec::new() };
                for s in 0..n {
                    for o in 0..cout {
                        let base = (s * cout + o) * h * w;
                        for i in 0..h {
                            for j in 0..w {
                                let gv = g[base + i * w + j];
                                for c in 0..cin {
                                    let xb = (s * cin + c) * h * w;
                                    let kb = (o * cin + c) * 9;
                                    for (di, dj, ii, jj) in taps(i, j, h, w) {
                                        if wx {
                                            let p = xb + ii * w + jj;
                                            gx[p] = gx[p] + gv * kd[kb + di * 3 + dj];
                                        }
                                        if wk {
                                            let q = kb + di * 3 + dj;
                                            gk[q] = gk[q] + gv * xd[xb + ii * w + jj];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if wx {
                    accumulate(grads, *x, gx);
                }
                if wk {
                    accumulate(grads, *k, gk);
                }
                if want(*b) {
                    accumulate(grads, *b, channel_sums(g, n, cout, h * w));
                }
            }
            Op::LayerNorm { x, gamma, beta } => {
                let xs = self.shape(*x);
                let (n, f) = (xs[0], xs[1]);
                let (xhat, rstd) = node.saved.split_at(n * f);
                let gd = self.value(*gamma).data();
                if want(*gamma) {
                    let mut gg = vec![T::zero(); f];
                    for (gr, xr) in g.chunks_exact(f).zip(xhat.chunks_exact(f)) {
                        for ((d, &gv), &xv) in gg.iter_mut().zip(gr).zip(xr) {
                            *d = *d + gv * xv;
                        }
                    }
                    accumulate(grads, *gamma, gg);
                }
                if want(*beta) {
                    let mut gb = vec![T::zero(); f];
                    for gr in g.chunks_exact(f) {
                        for (d, &gv) in gb.iter_mut().zip(gr) {
                            *d = *d + gv;
                        }
                    }
                    accumulate(grads, *beta, gb);
                }
                if want(*x) {
                    let ft = T::from_f64(f as f64);
                    let mut gx = Vec::with_capacity(n * f);
                    for ((gr, xr), &rs) in g.chunks_exact(f).zip(xhat.chunks_exact(f)).zip(rstd) {
                        let mut sum_g = T::zero();
                        let mut sum_gx = T::zero();
                        for ((&gv, &gam), &xv) in gr.iter().zip(gd).zip(xr) {
                            let gh = gv * gam;
                            sum_g = sum_g + gh;
                            sum_gx = sum_gx + gh * xv;
                        }
                        for ((&gv, &gam), &xv) in gr.iter().zip(gd).zip(xr) {
                            let gh = gv * gam;
                            gx.push(rs / ft * (ft * gh - sum_g - xv * sum_gx));
                        }
                    }
                    accumulate(grads, *x, gx);
                }
            }
            Op::Silu(x) => {
                if want(*x) {
                    let gx = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&v, &gv)| {
                            let s = sigmoid(v);
                            gv * s * (T::one() + v * (T::one() - s))
                        })
                        .collect();
                    accumulate(grads, *x, gx);
                }
            }
            Op::Tanh(x) => {
                if want(*x) {
                    let gx = node
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&y, &gv)| gv * (T::one() - y * y))
                        .collect();
                    accumulate(grads, *x, gx);
                }
            }
            Op::Flip { x, axis } => {
                if want(*x) {
                    accumulate(grads, *x, flip_data(g, self.shape(*x), *axis));
                }
            }
            Op::Mean { x, axis } => {
                if want(*x) {
                    let (outer, ext, inner) = split_axis(self.shape(*x), *axis);
                    let scale = T::one() / T::from_f64(ext as f64);
                    let mut gx = Vec::with_capacity(outer * ext * inner);
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for _ in 0..ext {
                            gx.extend(src.iter().map(|&v| v * scale));
                        }
                    }
                    accumulate(grads, *x, gx);
                }
            }
            Op::Add(a, b) => {
                if want(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if want(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if want(*a) {
                    accumulate(grads, *a, g.iter().zip(bd).map(|(&p, &q)| p * q).collect());
                }
                if want(*b) {
                    accumulate(grads, *b, g.iter().zip(ad).map(|(&p, &q)| p * q).collect());
                }
            }
            Op::Scale(x, factor) => {
                if want(*x) {
                    let f = T::from_f64(*factor);
                    accumulate(grads, *x, g.iter().map(|&v| v * f).collect());
                }
            }
            Op::ChannelBias { x, b } => {
                if want(*x) {
                    accumulate(grads, *x, g.to_vec());
                }
                if want(*b) {
                    let (outer, ch, inner) = split_axis(self.shape(*x), 1);
                    accumulate(grads, *b, channel_sums(g, outer, ch, inner));
                }
            }
            Op::Reshape(x) => {
                if want(*x) {
                    accumulate(grads, *x, g.to_vec());
                }
            }
            Op::SwapLast2(x) => {
                if want(*x) {
                    let s = self.shape(*x);
                    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                    // the output blocks are [c, r]; transposing them restores [r, c]
                    accumulate(grads, *x, transpose_blocks(g, c, r));
                }
            }
            Op::Sum(x) => {
                if want(*x) {
                    accumulate(grads, *x, vec![g[0]; self.value(*x).numel()]);
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                if want(*logits) {
                    let k = self.shape(*logits)[1];
                    let n = labels.len();
                    let scale = g[0] / T::from_f64(n as f64);
                    let mut gl = node.saved.clone();
                    for (row, &label) in gl.chunks_exact_mut(k).zip(labels) {
                        row[label] = row[label] - T::one();
                        row.iter_mut().for_each(|v| *v = *v * scale);
                    }
                    accumulate(grads, *logits, gl);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], var: Var, g: Vec<T>) {
    match &mut grads[var.0] {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a = *a + v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn channel_sums<T: Real>(g: &[T], outer: usize, ch: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); ch];
    for o in 0..outer {
        for (c, d) in out.iter_mut().enumerate() {
            let start = (o * ch + c) * inner;
            *d = g[start..start + inner].iter().fold(*d, |a, &v| a + v);
        }
    }
    out
}

/// In-bounds 3×3 taps around (i, j): (kernel row, kernel col, input row, input col).
fn taps(i: usize, j: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize, usize, usize)> {
    (0..3usize).flat_map(move |di| {
        (0..3usize).filter_map(move |dj| {
            let ii = (i + di).checked_sub(1)?;
            let jj = (j + dj).checked_sub(1)?;
            (ii < h && jj < w).then_some((di, dj, ii, jj))
        })
    })
}

fn resolve_axis(op: &'static str, shape: &[usize], axis: isize) -> Result<usize> {
    let nd = shape.len() as isize;
    let a = if axis < 0 { axis + nd } else { axis };
    if a < 0 || a >= nd {
        return Err(Error::shape(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(a as usize)
}

fn flip_data<T: Copy>(data: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, ext, inner) = split_axis(shape, axis);
    let mut out = Vec::with_capacity(data.len());
    for o in 0..outer {
        for e in (0..ext).rev() {
            let start = (o * ext + e) * inner;
            out.extend_from_slice(&data[start..start + inner]);
        }
    }
    out
}

/// Transposes each consecutive `[rows, cols]` block of `data`.
fn transpose_blocks<T: Copy + Default>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::default(); data.len()];
    for (src, dst) in data
        .chunks_exact(rows * cols)
        .zip(out.chunks_exact_mut(rows * cols))
    {
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
    out
}
