//! The recording tape. Every forward op appends a node holding its output
//! value and enough information to replay the chain rule; [`Graph::backward`]
//! walks the tape once in reverse and accumulates gradients into leaf
//! buffers. Nodes are topologically ordered by construction because an op can
//! only consume handles that already exist.

use crate::{AutodiffError, Result, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(usize);

/// Geometry of a 2-D convolution over `[batch, channels, h, w]` input.
///
/// The weight tensor is stored pre-flattened as `[out_channels,
/// in_channels * kernel * kernel]` so the forward pass is an im2col gather
/// followed by a plain matrix multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Value, Value),
    Sub(Value, Value),
    Mul(Value, Value),
    MatMul(Value, Value),
    Scale(Value, f64),
    // The offset only matters at forward time; backward passes grads through.
    AddScalar(Value, #[allow(dead_code)] f64),
    Tanh(Value),
    Sigmoid(Value),
    Relu(Value),
    Softplus(Value),
    Exp(Value),
    Log(Value),
    Clamp(Value, f64, f64),
    Sum(Value, Option<usize>),
    Mean(Value, Option<usize>),
    Concat(Vec<Value>, usize),
    Reshape(Value),
    Conv2d {
        x: Value,
        w: Value,
        b: Value,
        spec: ConvSpec,
    },
    Upsample2x(Value),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradient buffers produced by [`Graph::backward`], indexed by the node
/// handles of the consumed graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Value) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Value) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// The computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

// -- shape helpers -----------------------------------------------------------

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        if da != db && da != 1 && db != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Row-major strides with 0 where the (left-padded) dim is broadcast.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut padded = vec![1usize; rank];
    padded[rank - shape.len()..].copy_from_slice(shape);
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for d in (0..rank).rev() {
        strides[d] = if padded[d] == 1 { 0 } else { acc };
        acc *= padded[d];
    }
    strides
}

/// Visits every flat output index together with the flat indices of both
/// broadcast operands.
fn for_each_broadcast(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let numel: usize = out_shape.iter().product();
    let rank = out_shape.len();
    let mut coords = vec![0usize; rank];
    let (mut ai, mut bi) = (0usize, 0usize);
    for oi in 0..numel {
        f(oi, ai, bi);
        for d in (0..rank).rev() {
            coords[d] += 1;
            ai += sa[d];
            bi += sb[d];
            if coords[d] < out_shape[d] {
                break;
            }
            ai -= sa[d] * out_shape[d];
            bi -= sb[d] * out_shape[d];
            coords[d] = 0;
        }
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Per-axis source indices and interpolation weight for a 2x bilinear
/// upsample with clamped edges: output i samples input at (i + 0.5)/2 - 0.5.
fn upsample_axis_map(n_in: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n_in)
        .map(|i| {
            let s = (i as f64 + 0.5) / 2.0 - 0.5;
            if s <= 0.0 {
                (0, 0, 0.0)
            } else if s >= (n_in - 1) as f64 {
                (n_in - 1, n_in - 1, 0.0)
            } else {
                let i0 = s.floor() as usize;
                (i0, i0 + 1, s - i0 as f64)
            }
        })
        .collect()
}

/// im2col for one sample: `[channels, h, w]` slice to a
/// `[channels*k*k, oh*ow]` column matrix with zero padding.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let k = spec.kernel;
    let pcols = oh * ow;
    let mut cols = vec![0.0; c * k * k * pcols];
    for ch in 0..c {
        for di in 0..k {
            for dj in 0..k {
                let row = (ch * k + di) * k + dj;
                let out_row = &mut cols[row * pcols..(row + 1) * pcols];
                for oi in 0..oh {
                    let yy = (oi * spec.stride + di) as isize - spec.pad as isize;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let xx = (oj * spec.stride + dj) as isize - spec.pad as isize;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        out_row[oi * ow + oj] = x[(ch * h + yy as usize) * w + xx as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds column gradients back into the image.
#[allow(clippy::too_many_arguments)]
fn col2im_add(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    dx: &mut [f64],
) {
    let k = spec.kernel;
    let pcols = oh * ow;
    for ch in 0..c {
        for di in 0..k {
            for dj in 0..k {
                let row = (ch * k + di) * k + dj;
                let col_row = &cols[row * pcols..(row + 1) * pcols];
                for oi in 0..oh {
                    let yy = (oi * spec.stride + di) as isize - spec.pad as isize;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let xx = (oj * spec.stride + dj) as isize - spec.pad as isize;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        dx[(ch * h + yy as usize) * w + xx as usize] += col_row[oi * ow + oj];
                    }
                }
            }
        }
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

    pub fn value(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers an input tensor. Gradients are accumulated for it only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Value {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Value {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Value {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Value(self.nodes.len() - 1)
    }

    fn rg(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }

    // -- elementwise binary ops (broadcasting) -------------------------------

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Value,
        b: Value,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Value> {
        let out_shape = broadcast_shape(op_name, self.value(a).shape(), self.value(b).shape())?;
        let sa = broadcast_strides(self.value(a).shape(), &out_shape);
        let sb = broadcast_strides(self.value(b).shape(), &out_shape);
        let mut data = vec![0.0; out_shape.iter().product()];
        {
            let da = self.value(a).data();
            let db = self.value(b).data();
            for_each_broadcast(&out_shape, &sa, &sb, |oi, ai, bi| {
                data[oi] = f(da[ai], db[bi]);
            });
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(out_shape, data)?, rg, op))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], data)?, rg, Op::MatMul(a, b)))
    }

    // -- unary ops -----------------------------------------------------------

    fn unary(&mut self, x: Value, f: impl Fn(f64) -> f64, op: Op) -> Value {
        let value = Tensor::new(
            self.value(x).shape().to_vec(),
            self.value(x).data().iter().map(|&v| f(v)).collect(),
        )
        .expect("unary preserves shape");
        let rg = self.rg(x);
        self.push(value, rg, op)
    }

    pub fn scale(&mut self, x: Value, c: f64) -> Value {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Value, c: f64) -> Value {
        self.unary(x, |v| v + c, Op::AddScalar(x, c))
    }

    pub fn tanh(&mut self, x: Value) -> Value {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Value) -> Value {
        self.unary(x, stable_sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Value) -> Value {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn softplus(&mut self, x: Value) -> Value {
        self.unary(x, stable_softplus, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Value) -> Value {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// Natural log. The caller is responsible for keeping inputs positive;
    /// see [`Graph::clamp`] for the usual guard.
    pub fn log(&mut self, x: Value) -> Value {
        self.unary(x, f64::ln, Op::Log(x))
    }

    /// Clamps into `[lo, hi]`. The gradient passes only strictly inside the
    /// interval.
    pub fn clamp(&mut self, x: Value, lo: f64, hi: f64) -> Value {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    // -- reductions ----------------------------------------------------------

    fn reduce(
        &mut self,
        op_name: &'static str,
        x: Value,
        axis: Option<usize>,
        mean: bool,
    ) -> Result<Value> {
        let shape = self.value(x).shape().to_vec();
        let data = self.value(x).data();
        let (out_shape, out_data) = match axis {
            None => {
                let s: f64 = data.iter().sum();
                let v = if mean { s / data.len() as f64 } else { s };
                (vec![1], vec![v])
            }
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(AutodiffError::BadAxis { axis: ax, shape });
                }
                let outer: usize = shape[..ax].iter().product();
                let inner: usize = shape[ax + 1..].iter().product();
                let len = shape[ax];
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += data[base + i];
                        }
                    }
                }
                if mean {
                    for v in &mut out {
                        *v /= len as f64;
                    }
                }
                let mut os: Vec<usize> = shape[..ax].to_vec();
                os.extend_from_slice(&shape[ax + 1..]);
                if os.is_empty() {
                    os.push(1);
                }
                (os, out)
            }
        };
        let rg = self.rg(x);
        let op = if mean { Op::Mean(x, axis) } else { Op::Sum(x, axis) };
        let _ = op_name;
        Ok(self.push(Tensor::new(out_shape, out_data)?, rg, op))
    }

    pub fn sum(&mut self, x: Value, axis: Option<usize>) -> Result<Value> {
        self.reduce("sum", x, axis, false)
    }

    pub fn mean(&mut self, x: Value, axis: Option<usize>) -> Result<Value> {
        self.reduce("mean", x, axis, true)
    }

    // -- shape ops -----------------------------------------------------------

    pub fn reshape(&mut self, x: Value, shape: Vec<usize>) -> Result<Value> {
        let from = self.value(x).shape().to_vec();
        let from_len = self.value(x).len();
        let to_len: usize = shape.iter().product();
        if from_len != to_len {
            return Err(AutodiffError::BadReshape {
                from,
                from_len,
                to: shape,
                to_len,
            });
        }
        let value = Tensor::new(shape, self.value(x).data().to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::Reshape(x)))
    }

    /// Concatenates along `axis`; all other extents must match.
    pub fn concat(&mut self, inputs: &[Value], axis: usize) -> Result<Value> {
        assert!(!inputs.is_empty(), "concat needs at least one input");
        let first = self.value(inputs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(AutodiffError::BadAxis { axis, shape: first });
        }
        let mut axis_total = 0usize;
        for &v in inputs {
            let s = self.value(v).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0; out_shape.iter().product()];
        let row = axis_total * inner;
        let mut offset = 0usize;
        for &v in inputs {
            let s = self.value(v).shape();
            let block = s[axis] * inner;
            let src = self.value(v).data();
            for o in 0..outer {
                data[o * row + offset..o * row + offset + block]
                    .copy_from_slice(&src[o * block..(o + 1) * block]);
            }
            offset += block;
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            rg,
            Op::Concat(inputs.to_vec(), axis),
        ))
    }

    // -- structured ops ------------------------------------------------------

    /// 2-D convolution via im2col + matmul. `x` is `[batch, c, h, w]`, `w` is
    /// `[f, c*k*k]`, `b` is `[f]`.
    pub fn conv2d(&mut self, x: Value, w: Value, b: Value, spec: ConvSpec) -> Result<Value> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(AutodiffError::BadRank {
                op: "conv2d",
                expected: 4,
                shape: xs,
            });
        }
        let (bsz, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let k = spec.kernel;
        let ws = self.value(w).shape().to_vec();
        if c != spec.in_channels || ws != [spec.out_channels, c * k * k] {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        let bs = self.value(b).shape().to_vec();
        if bs != [spec.out_channels] {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d",
                lhs: ws,
                rhs: bs,
            });
        }
        let (oh, ow) = spec.out_hw(h, wd);
        let pcols = oh * ow;
        let f = spec.out_channels;
        let mut out = vec![0.0; bsz * f * pcols];
        for s in 0..bsz {
            let cols = im2col(
                &self.value(x).data()[s * c * h * wd..(s + 1) * c * h * wd],
                c,
                h,
                wd,
                &spec,
                oh,
                ow,
            );
            let y = matmul_raw(self.value(w).data(), &cols, f, c * k * k, pcols);
            let bias = self.value(b).data();
            let dst = &mut out[s * f * pcols..(s + 1) * f * pcols];
            for fi in 0..f {
                for p in 0..pcols {
                    dst[fi * pcols + p] = y[fi * pcols + p] + bias[fi];
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![bsz, f, oh, ow], out)?,
            rg,
            Op::Conv2d { x, w, b, spec },
        ))
    }

    /// Bilinear 2x upsampling of `[batch, c, h, w]` with clamped edges.
    pub fn upsample2x(&mut self, x: Value) -> Result<Value> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(AutodiffError::BadRank {
                op: "upsample2x",
                expected: 4,
                shape: xs,
            });
        }
        let (bsz, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let ymap = upsample_axis_map(h);
        let xmap = upsample_axis_map(w);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; bsz * c * oh * ow];
        let data = self.value(x).data();
        for bc in 0..bsz * c {
            let src = &data[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out[bc * oh * ow..(bc + 1) * oh * ow];
            for (oy, &(y0, y1, wy)) in ymap.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in xmap.iter().enumerate() {
                    let v00 = src[y0 * w + x0];
                    let v01 = src[y0 * w + x1];
                    let v10 = src[y1 * w + x0];
                    let v11 = src[y1 * w + x1];
                    dst[oy * ow + ox] = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01)
                        + wy * ((1.0 - wx) * v10 + wx * v11);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![bsz, c, oh, ow], out)?, rg, Op::Upsample2x(x)))
    }

    // -- backward ------------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Consumes the graph (the tape is
    /// cleared by the move) and returns per-node gradient buffers for every
    /// node on a gradient path.
    pub fn backward(self, loss: Value) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(AutodiffError::NonScalarLoss {
                shape: loss_node.value.shape().to_vec(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..n).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    self.accum_broadcast(&mut grads, *a, i, &g, |gv, _, _| gv);
                    self.accum_broadcast(&mut grads, *b, i, &g, |gv, _, _| gv);
                }
                Op::Sub(a, b) => {
                    self.accum_broadcast(&mut grads, *a, i, &g, |gv, _, _| gv);
                    self.accum_broadcast(&mut grads, *b, i, &g, |gv, _, _| -gv);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (*a, *b);
                    self.accum_broadcast_mul(&mut grads, av, bv, i, &g, false);
                    self.accum_broadcast_mul(&mut grads, bv, av, i, &g, true);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = {
                        let s = self.nodes[a.0].value.shape();
                        (s[0], s[1])
                    };
                    let nn = self.nodes[b.0].value.shape()[1];
                    if self.nodes[a.0].requires_grad {
                        // dA = dC . B^T
                        let bd = self.nodes[b.0].value.data();
                        let mut bt = vec![0.0; nn * k];
                        for r in 0..k {
                            for cc in 0..nn {
                                bt[cc * k + r] = bd[r * nn + cc];
                            }
                        }
                        let da = matmul_raw(&g, &bt, m, nn, k);
                        Self::accum_into(&mut grads, a.0, &da, self.nodes[a.0].value.len());
                    }
                    if self.nodes[b.0].requires_grad {
                        // dB = A^T . dC
                        let ad = self.nodes[a.0].value.data();
                        let mut at = vec![0.0; k * m];
                        for r in 0..m {
                            for cc in 0..k {
                                at[cc * m + r] = ad[r * k + cc];
                            }
                        }
                        let db = matmul_raw(&at, &g, k, m, nn);
                        Self::accum_into(&mut grads, b.0, &db, self.nodes[b.0].value.len());
                    }
                }
                Op::Scale(x, c) => self.accum_map(&mut grads, *x, i, &g, |gv, _, _| gv * c),
                Op::AddScalar(x, _) => self.accum_map(&mut grads, *x, i, &g, |gv, _, _| gv),
                Op::Tanh(x) => self.accum_map(&mut grads, *x, i, &g, |gv, _, y| gv * (1.0 - y * y)),
                Op::Sigmoid(x) => {
                    self.accum_map(&mut grads, *x, i, &g, |gv, _, y| gv * y * (1.0 - y))
                }
                Op::Relu(x) => self.accum_map(&mut grads, *x, i, &g, |gv, xv, _| {
                    if xv > 0.0 {
                        gv
                    } else {
                        0.0
                    }
                }),
                Op::Softplus(x) => {
                    self.accum_map(&mut grads, *x, i, &g, |gv, xv, _| gv * stable_sigmoid(xv))
                }
                Op::Exp(x) => self.accum_map(&mut grads, *x, i, &g, |gv, _, y| gv * y),
                Op::Log(x) => self.accum_map(&mut grads, *x, i, &g, |gv, xv, _| gv / xv),
                Op::Clamp(x, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    self.accum_map(&mut grads, *x, i, &g, move |gv, xv, _| {
                        if xv > lo && xv < hi {
                            gv
                        } else {
                            0.0
                        }
                    })
                }
                Op::Sum(x, axis) | Op::Mean(x, axis) => {
                    let is_mean = matches!(node.op, Op::Mean(..));
                    let in_shape = self.nodes[x.0].value.shape().to_vec();
                    let in_len = self.nodes[x.0].value.len();
                    if !self.nodes[x.0].requires_grad {
                        continue;
                    }
                    let mut dx = vec![0.0; in_len];
                    match axis {
                        None => {
                            let scale = if is_mean { 1.0 / in_len as f64 } else { 1.0 };
                            dx.fill(g[0] * scale);
                        }
                        Some(ax) => {
                            let outer: usize = in_shape[..*ax].iter().product();
                            let inner: usize = in_shape[*ax + 1..].iter().product();
                            let len = in_shape[*ax];
                            let scale = if is_mean { 1.0 / len as f64 } else { 1.0 };
                            for o in 0..outer {
                                for l in 0..len {
                                    let base = (o * len + l) * inner;
                                    for ii in 0..inner {
                                        dx[base + ii] = g[o * inner + ii] * scale;
                                    }
                                }
                            }
                        }
                    }
                    Self::accum_into(&mut grads, x.0, &dx, in_len);
                }
                Op::Concat(inputs, axis) => {
                    let out_shape = node.value.shape().to_vec();
                    let outer: usize = out_shape[..*axis].iter().product();
                    let inner: usize = out_shape[*axis + 1..].iter().product();
                    let row = out_shape[*axis] * inner;
                    let mut offset = 0usize;
                    for &v in inputs {
                        let s = self.nodes[v.0].value.shape();
                        let block = s[*axis] * inner;
                        if self.nodes[v.0].requires_grad {
                            let mut dv = vec![0.0; self.nodes[v.0].value.len()];
                            for o in 0..outer {
                                dv[o * block..(o + 1) * block]
                                    .copy_from_slice(&g[o * row + offset..o * row + offset + block]);
                            }
                            Self::accum_into(&mut grads, v.0, &dv, dv.len());
                        }
                        offset += block;
                    }
                }
                Op::Reshape(x) => {
                    if self.nodes[x.0].requires_grad {
                        Self::accum_into(&mut grads, x.0, &g, self.nodes[x.0].value.len());
                    }
                }
                Op::Conv2d { x, w, b, spec } => {
                    let xs = self.nodes[x.0].value.shape();
                    let (bsz, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                    let (oh, ow) = spec.out_hw(h, wd);
                    let pcols = oh * ow;
                    let k = spec.kernel;
                    let f = spec.out_channels;
                    let kk = c * k * k;
                    let need_x = self.nodes[x.0].requires_grad;
                    let need_w = self.nodes[w.0].requires_grad;
                    let need_b = self.nodes[b.0].requires_grad;
                    let mut dw = vec![0.0; f * kk];
                    let mut db = vec![0.0; f];
                    let mut dx = vec![0.0; bsz * c * h * wd];
                    let xd = self.nodes[x.0].value.data();
                    let wd_data = self.nodes[w.0].value.data();
                    for s in 0..bsz {
                        let dy = &g[s * f * pcols..(s + 1) * f * pcols];
                        if need_b {
                            for fi in 0..f {
                                db[fi] += dy[fi * pcols..(fi + 1) * pcols].iter().sum::<f64>();
                            }
                        }
                        if need_w || need_x {
                            let cols = im2col(
                                &xd[s * c * h * wd..(s + 1) * c * h * wd],
                                c,
                                h,
                                wd,
                                spec,
                                oh,
                                ow,
                            );
                            if need_w {
                                // dW += dY . cols^T
                                for fi in 0..f {
                                    for r in 0..kk {
                                        let mut acc = 0.0;
                                        for p in 0..pcols {
                                            acc += dy[fi * pcols + p] * cols[r * pcols + p];
                                        }
                                        dw[fi * kk + r] += acc;
                                    }
                                }
                            }
                            if need_x {
                                // dcols = W^T . dY, then scatter back
                                let mut wt = vec![0.0; kk * f];
                                for r in 0..f {
                                    for cc in 0..kk {
                                        wt[cc * f + r] = wd_data[r * kk + cc];
                                    }
                                }
                                let dcols = matmul_raw(&wt, dy, kk, f, pcols);
                                col2im_add(
                                    &dcols,
                                    c,
                                    h,
                                    wd,
                                    spec,
                                    oh,
                                    ow,
                                    &mut dx[s * c * h * wd..(s + 1) * c * h * wd],
                                );
                            }
                        }
                    }
                    if need_w {
                        Self::accum_into(&mut grads, w.0, &dw, dw.len());
                    }
                    if need_b {
                        Self::accum_into(&mut grads, b.0, &db, db.len());
                    }
                    if need_x {
                        Self::accum_into(&mut grads, x.0, &dx, dx.len());
                    }
                }
                Op::Upsample2x(x) => {
                    if !self.nodes[x.0].requires_grad {
                        continue;
                    }
                    let xs = self.nodes[x.0].value.shape();
                    let (bsz, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let ymap = upsample_axis_map(h);
                    let xmap = upsample_axis_map(w);
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut dx = vec![0.0; bsz * c * h * w];
                    for bc in 0..bsz * c {
                        let src = &g[bc * oh * ow..(bc + 1) * oh * ow];
                        let dst = &mut dx[bc * h * w..(bc + 1) * h * w];
                        for (oy, &(y0, y1, wy)) in ymap.iter().enumerate() {
                            for (ox, &(x0, x1, wx)) in xmap.iter().enumerate() {
                                let gv = src[oy * ow + ox];
                                dst[y0 * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                                dst[y0 * w + x1] += gv * (1.0 - wy) * wx;
                                dst[y1 * w + x0] += gv * wy * (1.0 - wx);
                                dst[y1 * w + x1] += gv * wy * wx;
                            }
                        }
                    }
                    Self::accum_into(&mut grads, x.0, &dx, dx.len());
                }
            }
        }

        let mut out = Vec::with_capacity(n);
        for (i, node) in self.nodes.into_iter().enumerate() {
            out.push(match grads[i].take() {
                Some(g) if node.requires_grad => {
                    Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
                }
                _ => None,
            });
        }
        Ok(Gradients { grads: out })
    }

    fn accum_into(grads: &mut [Option<Vec<f64>>], idx: usize, add: &[f64], len: usize) {
        let slot = grads[idx].get_or_insert_with(|| vec![0.0; len]);
        for (dst, v) in slot.iter_mut().zip(add) {
            *dst += v;
        }
    }

    /// Accumulates a same-shape elementwise gradient, mapping through
    /// `f(upstream, input_value, output_value)`. Unary ops preserve shape, so
    /// element `i` of input, output, and upstream gradient all line up.
    fn accum_map(
        &self,
        grads: &mut [Option<Vec<f64>>],
        x: Value,
        out_idx: usize,
        g: &[f64],
        f: impl Fn(f64, f64, f64) -> f64,
    ) {
        if !self.nodes[x.0].requires_grad {
            return;
        }
        let xv = self.nodes[x.0].value.data();
        let yv = self.nodes[out_idx].value.data();
        let len = xv.len();
        let slot = grads[x.0].get_or_insert_with(|| vec![0.0; len]);
        for i in 0..len {
            slot[i] += f(g[i], xv[i], yv[i]);
        }
    }

    /// Broadcast-aware gradient accumulation for add/sub.
    fn accum_broadcast(
        &self,
        grads: &mut [Option<Vec<f64>>],
        target: Value,
        out_idx: usize,
        g: &[f64],
        f: impl Fn(f64, f64, f64) -> f64,
    ) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let out_shape = self.nodes[out_idx].value.shape().to_vec();
        let ts = broadcast_strides(self.nodes[target.0].value.shape(), &out_shape);
        let zero = vec![0usize; out_shape.len()];
        let len = self.nodes[target.0].value.len();
        let slot = grads[target.0].get_or_insert_with(|| vec![0.0; len]);
        for_each_broadcast(&out_shape, &ts, &zero, |oi, ti, _| {
            slot[ti] += f(g[oi], 0.0, 0.0);
        });
    }

    /// Gradient of `mul` w.r.t. `target`, weighting by the other operand.
    fn accum_broadcast_mul(
        &self,
        grads: &mut [Option<Vec<f64>>],
        target: Value,
        other: Value,
        out_idx: usize,
        g: &[f64],
        _swapped: bool,
    ) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let out_shape = self.nodes[out_idx].value.shape().to_vec();
        let ts = broadcast_strides(self.nodes[target.0].value.shape(), &out_shape);
        let os = broadcast_strides(self.nodes[other.0].value.shape(), &out_shape);
        let other_data = self.nodes[other.0].value.data();
        let len = self.nodes[target.0].value.len();
        let slot = grads[target.0].get_or_insert_with(|| vec![0.0; len]);
        for_each_broadcast(&out_shape, &ts, &os, |oi, ti, other_i| {
            slot[ti] += g[oi] * other_data[other_i];
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.constant(t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let id = g.constant(t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let c = g.matmul(a, id).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).item().unwrap(), 0.5);
    }

    #[test]
    fn sum_of_concat() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::vector(vec![3.0]));
        let c = g.concat(&[a, b], 0).unwrap();
        let s = g.sum(c, None).unwrap();
        assert_eq!(g.value(s).item().unwrap(), 6.0);
    }

    #[test]
    fn backward_square() {
        // loss = sum(w*w), w=[1,2] -> grad 2w = [2,4]
        let mut g = Graph::new();
        let w = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq, None).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_sigmoid_quarter() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::scalar(0.0), true);
        let s = g.sigmoid(w);
        let grads = g.backward(s).unwrap();
        assert!((grads.get(w).unwrap().data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let y = g.tanh(w);
        let err = g.backward(y).unwrap_err();
        assert!(matches!(err, AutodiffError::NonScalarLoss { .. }));
    }

    #[test]
    fn broadcast_bias_add() {
        let mut g = Graph::new();
        let x = g.leaf(t(vec![2, 3], vec![0.0; 6]), true);
        let b = g.leaf(t(vec![1, 3], vec![1.0, 2.0, 3.0]), true);
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let s = g.sum(y, None).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn no_grad_forward_has_no_gradients() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::vector(vec![1.0, 2.0]), false);
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq, None).unwrap();
        assert!(!g.requires_grad(loss));
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(w).is_none());
    }

    #[test]
    fn mean_axis_values() {
        let mut g = Graph::new();
        let x = g.constant(t(vec![2, 2], vec![1.0, 3.0, 5.0, 7.0]));
        let m0 = g.mean(x, Some(0)).unwrap();
        assert_eq!(g.value(m0).data(), &[3.0, 5.0]);
        let m1 = g.mean(x, Some(1)).unwrap();
        assert_eq!(g.value(m1).data(), &[2.0, 6.0]);
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![1, 1, 4, 4], 2.5));
        let y = g.upsample2x(x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
        assert_eq!(g.value(y).shape(), &[1, 1, 8, 8]);
    }
}
