//! Dynamic reverse-mode tape.
//!
//! Every forward op appends a node holding its output value and, when any
//! input requires a gradient, whatever it needs for its backward rule. The
//! tape is rebuilt on every forward pass and consumed by [`Tape::backward`].

use super::conv::{self, ConvGeom};
use super::element::gemm;
use super::tensor::numel;
use super::{AutodiffError, Element, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameters of one LSTM direction, as bound on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    /// `[4H, D]`, gate order input, forget, cell, output.
    pub w_ih: Var,
    /// `[4H, H]`.
    pub w_hh: Var,
    /// `[4H]`.
    pub bias: Var,
}

/// Batch statistics computed by a training-mode normalization.
#[derive(Clone, Debug)]
pub struct BatchStats<E> {
    pub mean: Vec<E>,
    /// Biased (population) variance per channel.
    pub var: Vec<E>,
    /// Number of values reduced per channel.
    pub count: usize,
}

enum Op<E> {
    Leaf,
    Detached,
    Add(Var, Var),
    Relu(Var),
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, in_f: usize, out_f: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<E>, inv_std: Vec<E>, batch_stats: bool },
    AvgPool { x: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    L1 { pred: Var, target: Var },
    LstmCell { gx: Var, t: usize, h_prev: Option<Var>, c_prev: Option<Var>, w_hh: Var, gates: Vec<E> },
}

impl<E> Op<E> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Detached => "detached",
            Op::Add(..) => "add",
            Op::Relu(..) => "relu",
            Op::Linear { .. } => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::AvgPool { .. } => "global_avg_pool",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Reshape(..) => "reshape",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::L1 { .. } => "l1_loss",
            Op::LstmCell { .. } => "lstm_cell",
        }
    }
}

struct Node<E> {
    value: Option<Tensor<E>>,
    grad: Option<Vec<E>>,
    requires_grad: bool,
    op: Op<E>,
    op_name: &'static str,
}

pub struct Tape<E: Element> {
    nodes: Vec<Node<E>>,
    grad_enabled: bool,
    consumed: bool,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn sigmoid<E: Element>(x: E) -> E {
    E::one() / (E::one() + (-x).exp())
}

/// Splits a shape at `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<E: Element> Tape<E> {
    /// A tape that records backward information.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: true, consumed: false }
    }

    /// A tape for inference: nothing requires a gradient.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: false, consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        self.nodes.push(Node { value: Some(value), grad: None, requires_grad, op: Op::Leaf, op_name: "leaf" });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.leaf(value, false)
    }

    /// Value of `v`.
    ///
    /// # Panics
    /// If the value was released by [`Tape::backward`]; only leaves and the
    /// loss survive a backward pass.
    pub fn value(&self, v: Var) -> &Tensor<E> {
        self.nodes[v.0]
            .value
            .as_ref()
            .unwrap_or_else(|| panic!("value of node {} was released by backward", v.0))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<E>> {
        self.nodes[v.0].grad.take()
    }

    /// First recorded value containing NaN or infinity, with the op that produced it.
    pub fn first_non_finite(&self) -> Option<AutodiffError> {
        self.nodes.iter().enumerate().find_map(|(index, n)| match &n.value {
            Some(v) if !v.all_finite() => Some(AutodiffError::NonFinite { index, op: n.op_name }),
            _ => None,
        })
    }

    fn ensure_recording(&self, op: &'static str) -> Result<(), AutodiffError> {
        if self.consumed {
            Err(AutodiffError::Usage(format!("{op}: tape already consumed by backward; record a fresh forward pass")))
        } else {
            Ok(())
        }
    }

    fn push(&mut self, value: Tensor<E>, inputs: &[Var], op: Op<E>) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op_name = op.name();
        let op = if requires_grad { op } else { Op::Detached };
        self.nodes.push(Node { value: Some(value), grad: None, requires_grad, op, op_name });
        Var(self.nodes.len() - 1)
    }

    // ---- forward ops -----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.ensure_recording("add")?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(AutodiffError::shape("add", format!("lhs {:?} vs rhs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.push(out, &[a, b], Op::Add(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.ensure_recording("relu")?;
        let out = self.value(x).map(|v| if v > E::zero() { v } else { E::zero() });
        Ok(self.push(out, &[x], Op::Relu(x)))
    }

    /// `y = x·Wᵀ + b` over the last axis of `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        self.ensure_recording("linear")?;
        let (vx, vw) = (self.value(x), self.value(w));
        if vw.rank() != 2 {
            return Err(AutodiffError::shape("linear", format!("weight must be [out,in], got {:?}", vw.shape())));
        }
        let (out_f, in_f) = (vw.shape()[0], vw.shape()[1]);
        let last = *vx.shape().last().unwrap();
        if last != in_f {
            return Err(AutodiffError::shape(
                "linear",
                format!("input axis {} has size {last}, weight axis 1 expects {in_f}", vx.rank() - 1),
            ));
        }
        if let Some(b) = b {
            let vb = self.value(b);
            if vb.shape() != [out_f] {
                return Err(AutodiffError::shape("linear", format!("bias {:?} must be [{out_f}]", vb.shape())));
            }
        }
        let rows = vx.len() / in_f;
        let mut data = vec![E::zero(); rows * out_f];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for r in data.chunks_mut(out_f) {
                r.copy_from_slice(bias);
            }
        }
        let beta = if b.is_some() { E::one() } else { E::zero() };
        gemm(rows, in_f, out_f, E::one(), vx.data(), false, vw.data(), true, beta, &mut data);
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = out_f;
        let out = Tensor::from_parts(shape, data);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, &inputs, Op::Linear { x, w, b, rows, in_f, out_f }))
    }

    /// 2-D cross-correlation of `x [B,C_in,H,W]` with `w [C_out,C_in,k,k]`.
    ///
    /// Output spatial size is `floor((H + 2·padding − k)/stride) + 1`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var, AutodiffError> {
        self.ensure_recording("conv2d")?;
        let (vx, vw) = (self.value(x), self.value(w));
        if vx.rank() != 4 {
            return Err(AutodiffError::shape("conv2d", format!("input must be [B,C,H,W], got {:?}", vx.shape())));
        }
        if vw.rank() != 4 {
            return Err(AutodiffError::shape("conv2d", format!("weight must be [C_out,C_in,k,k], got {:?}", vw.shape())));
        }
        let (xs, ws) = (vx.shape(), vw.shape());
        if ws[1] != xs[1] {
            return Err(AutodiffError::shape(
                "conv2d",
                format!("input axis 1 (channels) is {}, weight axis 1 expects {}", xs[1], ws[1]),
            ));
        }
        if ws[2] != ws[3] {
            return Err(AutodiffError::shape("conv2d", format!("weight axes 2 and 3 must match, got {} and {}", ws[2], ws[3])));
        }
        if stride == 0 {
            return Err(AutodiffError::shape("conv2d", "stride must be at least 1".into()));
        }
        let k = ws[2];
        let h_out = conv::out_size(xs[2], k, stride, padding).ok_or_else(|| {
            AutodiffError::shape("conv2d", format!("input axis 2 ({}) + 2·{padding} padding is smaller than kernel {k}", xs[2]))
        })?;
        let w_out = conv::out_size(xs[3], k, stride, padding).ok_or_else(|| {
            AutodiffError::shape("conv2d", format!("input axis 3 ({}) + 2·{padding} padding is smaller than kernel {k}", xs[3]))
        })?;
        if let Some(b) = b {
            let bs = self.value(b).shape();
            if bs != [ws[0]] {
                return Err(AutodiffError::shape("conv2d", format!("bias {:?} must be [{}]", bs, ws[0])));
            }
        }
        let geom = ConvGeom {
            batch: xs[0],
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ws[0],
            k,
            stride,
            pad: padding,
            h_out,
            w_out,
        };
        let data = conv::forward(vx.data(), vw.data(), b.map(|b| self.value(b).data()), &geom);
        let out = Tensor::from_parts(vec![geom.batch, geom.c_out, h_out, w_out], data);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, &inputs, Op::Conv2d { x, w, b, geom }))
    }

    fn norm_dims(&self, op: &'static str, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize), AutodiffError> {
        let xs = self.value(x).shape();
        if xs.len() < 2 {
            return Err(AutodiffError::shape(op, format!("input must have a channel axis 1, got {xs:?}")));
        }
        let (n, c, s) = (xs[0], xs[1], xs[2..].iter().product::<usize>());
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let ps = self.value(v).shape();
            if ps != [c] {
                return Err(AutodiffError::shape(op, format!("{name} {ps:?} must be [{c}] (input axis 1)")));
            }
        }
        Ok((n, c, s))
    }

    fn affine_normalize(&self, x: Var, gamma: Var, beta: Var, mean: &[E], inv_std: &[E], c: usize, s: usize) -> Tensor<E> {
        let vx = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut data = vec![E::zero(); vx.len()];
        for (blk, (dst, src)) in data.chunks_mut(s).zip(vx.data().chunks(s)).enumerate() {
            let ch = blk % c;
            let (m, is, gg, bb) = (mean[ch], inv_std[ch], g[ch], b[ch]);
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = gg * (v - m) * is + bb;
            }
        }
        Tensor::from_parts(vx.shape().to_vec(), data)
    }

    /// Per-channel normalization with batch statistics over every axis except 1.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats<E>), AutodiffError> {
        self.ensure_recording("batch_norm")?;
        let (n, c, s) = self.norm_dims("batch_norm", x, gamma, beta)?;
        let count = n * s;
        let vx = self.value(x).data();
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for (blk, chunk) in vx.chunks(s).enumerate() {
            mean[blk % c] += chunk.iter().map(|v| v.to_f64_lossy()).sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for (blk, chunk) in vx.chunks(s).enumerate() {
            let m = mean[blk % c];
            var[blk % c] += chunk.iter().map(|v| (v.to_f64_lossy() - m).powi(2)).sum::<f64>();
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let mean_e: Vec<E> = mean.iter().map(|&m| E::from_f64_lossy(m)).collect();
        let var_e: Vec<E> = var.iter().map(|&v| E::from_f64_lossy(v)).collect();
        let inv_std: Vec<E> = var.iter().map(|&v| E::from_f64_lossy(1.0 / (v + eps).sqrt())).collect();
        let out = self.affine_normalize(x, gamma, beta, &mean_e, &inv_std, c, s);
        let stats = BatchStats { mean: mean_e.clone(), var: var_e, count };
        let var = self.push(out, &[x, gamma, beta], Op::BatchNorm { x, gamma, beta, mean: mean_e, inv_std, batch_stats: true });
        Ok((var, stats))
    }

    /// Per-channel normalization with fixed (running) statistics.
    pub fn batch_norm_frozen(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[E],
        var: &[E],
        eps: f64,
    ) -> Result<Var, AutodiffError> {
        self.ensure_recording("batch_norm")?;
        let (_, c, s) = self.norm_dims("batch_norm", x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(AutodiffError::shape("batch_norm", format!("running statistics must have {c} channels")));
        }
        let inv_std: Vec<E> = var.iter().map(|&v| E::from_f64_lossy(1.0 / (v.to_f64_lossy() + eps).sqrt())).collect();
        let out = self.affine_normalize(x, gamma, beta, mean, &inv_std, c, s);
        Ok(self.push(
            out,
            &[x, gamma, beta],
            Op::BatchNorm { x, gamma, beta, mean: mean.to_vec(), inv_std, batch_stats: false },
        ))
    }

    /// Mean over the spatial axes: `[N,C,H,W] → [N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.ensure_recording("global_avg_pool")?;
        let vx = self.value(x);
        if vx.rank() != 4 {
            return Err(AutodiffError::shape("global_avg_pool", format!("input must be [N,C,H,W], got {:?}", vx.shape())));
        }
        let s = vx.shape()[2] * vx.shape()[3];
        let scale = E::one() / E::from_usize(s).unwrap();
        let data = vx.data().chunks(s).map(|c| c.iter().copied().sum::<E>() * scale).collect();
        let out = Tensor::from_parts(vec![vx.shape()[0], vx.shape()[1]], data);
        Ok(self.push(out, &[x], Op::AvgPool { x }))
    }

    /// Concatenation along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        self.ensure_recording("concat")?;
        let first = parts.first().ok_or_else(|| AutodiffError::Usage("concat of zero tensors".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::shape("concat", format!("axis {axis} out of range for rank {}", base.len())));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(AutodiffError::shape("concat", format!("{s:?} incompatible with {base:?} outside axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let span = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * span..(o + 1) * span]);
            }
        }
        let out = Tensor::from_parts(shape, data);
        Ok(self.push(out, parts, Op::Concat { parts: parts.to_vec(), axis }))
    }

    /// Sub-range `start..start+len` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        self.ensure_recording("narrow")?;
        let vx = self.value(x);
        let s = vx.shape();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(AutodiffError::shape("narrow", format!("range {start}..{} invalid for axis {axis} of {s:?}", start + len)));
        }
        let (outer, n, inner) = split_axis(s, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner;
            data.extend_from_slice(&vx.data()[base + start * inner..base + (start + len) * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let out = Tensor::from_parts(shape, data);
        Ok(self.push(out, &[x], Op::Narrow { x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        self.ensure_recording("reshape")?;
        let vx = self.value(x);
        if numel(shape) != vx.len() || shape.contains(&0) {
            return Err(AutodiffError::shape("reshape", format!("cannot view {:?} as {shape:?}", vx.shape())));
        }
        let out = Tensor::from_parts(shape.to_vec(), vx.data().to_vec());
        Ok(self.push(out, &[x], Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.ensure_recording("sum")?;
        let s: E = self.value(x).data().iter().copied().sum();
        Ok(self.push(Tensor::scalar(s), &[x], Op::Sum(x)))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.ensure_recording("mean")?;
        let v = self.value(x);
        let s: E = v.data().iter().copied().sum();
        let m = s / E::from_usize(v.len()).unwrap();
        Ok(self.push(Tensor::scalar(m), &[x], Op::Mean(x)))
    }

    /// Mean absolute difference over all elements.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var, AutodiffError> {
        self.ensure_recording("l1_loss")?;
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(AutodiffError::shape("l1_loss", format!("prediction {:?} vs target {:?}", p.shape(), t.shape())));
        }
        let s: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs()).sum();
        let m = E::from_f64_lossy(s / p.len() as f64);
        Ok(self.push(Tensor::scalar(m), &[pred, target], Op::L1 { pred, target }))
    }

    /// One LSTM step reading pre-computed input projections `gx[:, t, :]`.
    ///
    /// `gx` is `[B,T,4H]` and already contains `W_ih·x + b`; `w_hh` is `[4H,H]`.
    /// Missing `h_prev`/`c_prev` mean zero state. The output packs `[h | c]`
    /// as `[B, 2H]`.
    pub fn lstm_cell(
        &mut self,
        gx: Var,
        t: usize,
        h_prev: Option<Var>,
        c_prev: Option<Var>,
        w_hh: Var,
    ) -> Result<Var, AutodiffError> {
        self.ensure_recording("lstm_cell")?;
        let (vg, vw) = (self.value(gx), self.value(w_hh));
        if vw.rank() != 2 || vw.shape()[0] != 4 * vw.shape()[1] {
            return Err(AutodiffError::shape("lstm_cell", format!("recurrent weight must be [4H,H], got {:?}", vw.shape())));
        }
        let hid = vw.shape()[1];
        let gs = vg.shape();
        if gs.len() != 3 || gs[2] != 4 * hid {
            return Err(AutodiffError::shape("lstm_cell", format!("input projection must be [B,T,{}], got {gs:?}", 4 * hid)));
        }
        let (batch, steps) = (gs[0], gs[1]);
        if t >= steps {
            return Err(AutodiffError::shape("lstm_cell", format!("time index {t} outside axis 1 of size {steps}")));
        }
        for (name, v) in [("h_prev", h_prev), ("c_prev", c_prev)] {
            if let Some(v) = v {
                let s = self.value(v).shape();
                if s != [batch, hid] {
                    return Err(AutodiffError::shape("lstm_cell", format!("{name} {s:?} must be [{batch},{hid}]")));
                }
            }
        }
        let g4 = 4 * hid;
        let mut pre = vec![E::zero(); batch * g4];
        for b in 0..batch {
            let off = (b * steps + t) * g4;
            pre[b * g4..(b + 1) * g4].copy_from_slice(&vg.data()[off..off + g4]);
        }
        if let Some(h) = h_prev {
            gemm(batch, hid, g4, E::one(), self.value(h).data(), false, vw.data(), true, E::one(), &mut pre);
        }
        let mut state = vec![E::zero(); batch * 2 * hid];
        for b in 0..batch {
            let row = &mut pre[b * g4..(b + 1) * g4];
            for j in 0..hid {
                let i = sigmoid(row[j]);
                let f = sigmoid(row[hid + j]);
                let g = row[2 * hid + j].tanh();
                let o = sigmoid(row[3 * hid + j]);
                row[j] = i;
                row[hid + j] = f;
                row[2 * hid + j] = g;
                row[3 * hid + j] = o;
                let cp = c_prev.map_or(E::zero(), |c| self.value(c).data()[b * hid + j]);
                let c = f * cp + i * g;
                state[b * 2 * hid + j] = o * c.tanh();
                state[b * 2 * hid + hid + j] = c;
            }
        }
        let out = Tensor::from_parts(vec![batch, 2 * hid], state);
        let mut inputs = vec![gx, w_hh];
        inputs.extend(h_prev);
        inputs.extend(c_prev);
        Ok(self.push(out, &inputs, Op::LstmCell { gx, t, h_prev, c_prev, w_hh, gates: pre }))
    }

    /// Standard LSTM step: returns `(h, c)`, each `[B,H]`.
    pub fn lstm_step(&mut self, x: Var, h_prev: Var, c_prev: Var, w: &LstmVars) -> Result<(Var, Var), AutodiffError> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 {
            return Err(AutodiffError::shape("lstm_step", format!("input must be [B,D], got {xs:?}")));
        }
        let hid = self.value(w.w_hh).shape()[1];
        let gx = self.linear(x, w.w_ih, Some(w.bias))?;
        let gx = self.reshape(gx, &[xs[0], 1, 4 * hid])?;
        let state = self.lstm_cell(gx, 0, Some(h_prev), Some(c_prev), w.w_hh)?;
        let h = self.narrow(state, 1, 0, hid)?;
        let c = self.narrow(state, 1, hid, hid)?;
        Ok((h, c))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Leaves keep their values and receive gradients; intermediate values
    /// are released as soon as their node has been processed. The tape is
    /// consumed afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::Usage("backward called twice on the same tape; re-run the forward pass".into()));
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::Usage(format!("backward needs a scalar loss, got shape {:?}", lv.shape())));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(AutodiffError::Usage("loss does not depend on any tensor that requires a gradient".into()));
        }
        self.consumed = true;
        self.nodes[loss.0].grad = Some(vec![E::one()]);
        for i in (0..self.nodes.len()).rev() {
            let is_leaf = matches!(self.nodes[i].op, Op::Leaf);
            if is_leaf {
                continue;
            }
            if self.nodes[i].requires_grad {
                if let Some(g) = self.nodes[i].grad.take() {
                    let op = std::mem::replace(&mut self.nodes[i].op, Op::Detached);
                    self.backward_node(Var(i), &op, &g);
                }
            }
            self.nodes[i].grad = None;
            if i != loss.0 {
                self.nodes[i].value = None;
            }
        }
        Ok(())
    }

    fn zero_like(&self, v: Var) -> Vec<E> {
        vec![E::zero(); self.value(v).len()]
    }

    /// Removes `v`'s gradient buffer (zeros when absent) for in-place accumulation.
    fn grad_buf(&mut self, v: Var) -> Vec<E> {
        match self.nodes[v.0].grad.take() {
            Some(g) => g,
            None => self.zero_like(v),
        }
    }

    fn put_grad(&mut self, v: Var, g: Vec<E>) {
        self.nodes[v.0].grad = Some(g);
    }

    fn accum(&mut self, v: Var, contrib: Vec<E>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.nodes[v.0].grad {
            Some(g) => g.iter_mut().zip(&contrib).for_each(|(a, b)| *a += *b),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&mut self, out: Var, op: &Op<E>, g: &[E]) {
        match op {
            Op::Leaf | Op::Detached => {}
            Op::Add(a, b) => {
                self.accum(*a, g.to_vec());
                self.accum(*b, g.to_vec());
            }
            Op::Relu(x) => {
                let y = self.value(out).data();
                let dx = y.iter().zip(g).map(|(&y, &g)| if y > E::zero() { g } else { E::zero() }).collect();
                self.accum(*x, dx);
            }
            Op::Linear { x, w, b, rows, in_f, out_f } => {
                let (rows, in_f, out_f) = (*rows, *in_f, *out_f);
                if self.wants(*x) {
                    let mut dx = vec![E::zero(); rows * in_f];
                    gemm(rows, out_f, in_f, E::one(), g, false, self.value(*w).data(), false, E::zero(), &mut dx);
                    self.accum(*x, dx);
                }
                if self.wants(*w) {
                    let mut dw = self.grad_buf(*w);
                    gemm(out_f, rows, in_f, E::one(), g, true, self.value(*x).data(), false, E::one(), &mut dw);
                    self.put_grad(*w, dw);
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let mut db = self.grad_buf(b);
                    for r in g.chunks(out_f) {
                        db.iter_mut().zip(r).for_each(|(d, &v)| *d += v);
                    }
                    self.put_grad(b, db);
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let mut dx = self.wants(*x).then(|| self.grad_buf(*x));
                let mut dw = self.wants(*w).then(|| self.grad_buf(*w));
                let mut db = b.filter(|b| self.wants(*b)).map(|b| self.grad_buf(b));
                conv::backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    geom,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    self.put_grad(*x, dx);
                }
                if let Some(dw) = dw {
                    self.put_grad(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    self.put_grad(*b, db);
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, inv_std, batch_stats } => {
                let vx = self.value(*x);
                let (c, s) = (vx.shape()[1], vx.shape()[2..].iter().product::<usize>());
                let count = vx.len() / c;
                let gam = self.value(*gamma).data();
                // Per-channel sums of dy and dy·x̂.
                let mut sum_dy = vec![0.0f64; c];
                let mut sum_dy_xhat = vec![0.0f64; c];
                for (blk, (gx, xx)) in g.chunks(s).zip(vx.data().chunks(s)).enumerate() {
                    let ch = blk % c;
                    let (m, is) = (mean[ch], inv_std[ch]);
                    for (&dy, &v) in gx.iter().zip(xx) {
                        let dy = dy.to_f64_lossy();
                        sum_dy[ch] += dy;
                        sum_dy_xhat[ch] += dy * ((v - m) * is).to_f64_lossy();
                    }
                }
                let dx = self.wants(*x).then(|| {
                    let mut dx = vec![E::zero(); vx.len()];
                    for (blk, ((d, gx), xx)) in dx.chunks_mut(s).zip(g.chunks(s)).zip(vx.data().chunks(s)).enumerate() {
                        let ch = blk % c;
                        let (m, is, gm) = (mean[ch], inv_std[ch], gam[ch]);
                        if *batch_stats {
                            let n = count as f64;
                            let mdy = E::from_f64_lossy(sum_dy[ch] / n);
                            let mdyx = E::from_f64_lossy(sum_dy_xhat[ch] / n);
                            for ((d, &dy), &v) in d.iter_mut().zip(gx).zip(xx) {
                                let xhat = (v - m) * is;
                                *d = gm * is * (dy - mdy - xhat * mdyx);
                            }
                        } else {
                            for (d, &dy) in d.iter_mut().zip(gx) {
                                *d = gm * is * dy;
                            }
                        }
                    }
                    dx
                });
                if let Some(dx) = dx {
                    self.accum(*x, dx);
                }
                self.accum(*gamma, sum_dy_xhat.iter().map(|&v| E::from_f64_lossy(v)).collect());
                self.accum(*beta, sum_dy.iter().map(|&v| E::from_f64_lossy(v)).collect());
            }
            Op::AvgPool { x } => {
                let vx = self.value(*x);
                let s = vx.shape()[2] * vx.shape()[3];
                let scale = E::one() / E::from_usize(s).unwrap();
                let mut dx = vec![E::zero(); vx.len()];
                for (chunk, &gv) in dx.chunks_mut(s).zip(g) {
                    chunk.iter_mut().for_each(|d| *d = gv * scale);
                }
                self.accum(*x, dx);
            }
            Op::Concat { parts, axis } => {
                let shape = self.value(out).shape().to_vec();
                let (outer, total, inner) = split_axis(&shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).shape()[*axis];
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g[base..base + n * inner]);
                        }
                        self.accum(p, d);
                    }
                    offset += n;
                }
            }
            Op::Narrow { x, axis, start } => {
                if self.wants(*x) {
                    let len = self.value(out).shape()[*axis];
                    let (outer, n, inner) = split_axis(self.value(*x).shape(), *axis);
                    let mut dx = self.grad_buf(*x);
                    for o in 0..outer {
                        let base = o * n * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        dx[base..base + len * inner].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                    }
                    self.put_grad(*x, dx);
                }
            }
            Op::Reshape(x) => self.accum(*x, g.to_vec()),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accum(*x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accum(*x, vec![g[0] / E::from_usize(n).unwrap(); n]);
            }
            Op::L1 { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let scale = g[0] / E::from_usize(p.len()).unwrap();
                let dp: Vec<E> = p
                    .iter()
                    .zip(t)
                    .map(|(&a, &b)| {
                        if a > b {
                            scale
                        } else if a < b {
                            -scale
                        } else {
                            E::zero()
                        }
                    })
                    .collect();
                if self.wants(*target) {
                    self.accum(*target, dp.iter().map(|&v| -v).collect());
                }
                self.accum(*pred, dp);
            }
            Op::LstmCell { gx, t, h_prev, c_prev, w_hh, gates } => {
                let state = self.value(out).data();
                let hid = self.value(*w_hh).shape()[1];
                let g4 = 4 * hid;
                let batch = state.len() / (2 * hid);
                let mut dpre = vec![E::zero(); batch * g4];
                let mut dc_prev = c_prev.map(|_| vec![E::zero(); batch * hid]);
                for b in 0..batch {
                    let gate = &gates[b * g4..(b + 1) * g4];
                    for j in 0..hid {
                        let (i, f, gg, o) = (gate[j], gate[hid + j], gate[2 * hid + j], gate[3 * hid + j]);
                        let c = state[b * 2 * hid + hid + j];
                        let tc = c.tanh();
                        let dh = g[b * 2 * hid + j];
                        let dc = g[b * 2 * hid + hid + j] + dh * o * (E::one() - tc * tc);
                        let cp = c_prev.map_or(E::zero(), |v| self.value(v).data()[b * hid + j]);
                        let row = &mut dpre[b * g4..(b + 1) * g4];
                        row[j] = dc * gg * i * (E::one() - i);
                        row[hid + j] = dc * cp * f * (E::one() - f);
                        row[2 * hid + j] = dc * i * (E::one() - gg * gg);
                        row[3 * hid + j] = dh * tc * o * (E::one() - o);
                        if let Some(d) = dc_prev.as_mut() {
                            d[b * hid + j] = dc * f;
                        }
                    }
                }
                if let (Some(c), Some(d)) = (c_prev, dc_prev) {
                    self.accum(*c, d);
                }
                if let Some(h) = h_prev {
                    if self.wants(*h) {
                        let mut dh = vec![E::zero(); batch * hid];
                        gemm(batch, g4, hid, E::one(), &dpre, false, self.value(*w_hh).data(), false, E::zero(), &mut dh);
                        self.accum(*h, dh);
                    }
                    if self.wants(*w_hh) {
                        let mut dw = self.grad_buf(*w_hh);
                        gemm(g4, batch, hid, E::one(), &dpre, true, self.value(*h).data(), false, E::one(), &mut dw);
                        self.put_grad(*w_hh, dw);
                    }
                }
                if self.wants(*gx) {
                    let steps = self.value(*gx).shape()[1];
                    let mut dgx = self.grad_buf(*gx);
                    for b in 0..batch {
                        let off = (b * steps + t) * g4;
                        dgx[off..off + g4].iter_mut().zip(&dpre[b * g4..(b + 1) * g4]).for_each(|(d, &v)| *d += v);
                    }
                    self.put_grad(*gx, dgx);
                }
            }
        }
    }
}
