use std::borrow::Cow;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Softmax(Var, usize),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Row(Var, usize),
    MeanOf(Vec<Var>),
    Embedding(Var, Vec<usize>),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        c_out: usize,
    },
    Pool {
        input: Var,
        geom: ConvGeom,
        mode: PoolMode,
        argmax: Vec<usize>,
    },
    Upsample2x(Var),
    ChannelAdd(Var, Var),
    ChannelMul(Var, Var),
    InstanceNorm {
        input: Var,
        inv_std: Vec<f64>,
    },
    GlobalAvgPool(Var),
    Outer(Var, Var),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for reverse-mode differentiation.
///
/// Parameters are borrowed for the tape's lifetime (`'p`) and bound once
/// per tensor address, so every use of a parameter inside one forward pass
/// shares a single gradient slot.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    grads: Vec<Option<Tensor>>,
    bound: HashMap<*const Tensor, Var>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_or_scalar(a: &Tensor, b: &Tensor, what: &str) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if b.len() == 1 {
        Ok(a.shape().to_vec())
    } else if a.len() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::dim(format!(
            "{what}: shapes {:?} and {:?} are neither equal nor scalar",
            a.shape(),
            b.shape()
        )))
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

fn chw(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::dim(format!("{what} expects [c,h,w], got {s:?}"))),
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            bound: HashMap::new(),
        }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var], what: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(what));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Cow::Owned(value), op, requires_grad))
    }

    /// A differentiable leaf owned by the tape.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// A constant borrowed from the caller.
    pub fn constant_ref(&mut self, value: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    /// Binds a borrowed parameter; repeated calls return the same handle.
    pub fn param(&mut self, value: &'p Tensor) -> Var {
        let key = value as *const Tensor;
        if let Some(&v) = self.bound.get(&key) {
            return v;
        }
        let v = self.push(Cow::Borrowed(value), Op::Leaf, true);
        self.bound.insert(key, v);
        v
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a parameter bound with [`Tape::param`]; zeros if the
    /// parameter was unused or not reached.
    pub fn param_grad(&self, param: &Tensor) -> Tensor {
        self.bound
            .get(&(param as *const Tensor))
            .and_then(|&v| self.grad(v).cloned())
            .unwrap_or_else(|| Tensor::zeros(param.shape()))
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, k2, n) = match (av.shape(), bv.shape()) {
            ([m, k], [k2, n]) => (*m, *k, *k2, *n),
            (sa, sb) => {
                return Err(Error::dim(format!(
                    "matmul expects rank-2 operands, got {sa:?} and {sb:?}"
                )))
            }
        };
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner extents differ: [{m},{k}] x [{k2},{n}]"
            )));
        }
        let out = kernels::matmul(av.data(), bv.data(), m, k, n);
        self.record(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `x[1,in] * w[in,out] + b[1,out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(av.len() * bv.len());
        for &x in av.data() {
            out.extend(bv.data().iter().map(|&y| x * y));
        }
        let n = out.len();
        self.record(Tensor::from_parts(vec![n], out), Op::Outer(a, b), &[a, b], "outer")
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, which: u8) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let what = ["add", "sub", "mul"][which as usize];
        let shape = same_or_scalar(av, bv, what)?;
        let n: usize = shape.iter().product();
        let get = |t: &Tensor, i: usize| if t.len() == 1 { t.data()[0] } else { t.data()[i] };
        let f = |x: f64, y: f64| match which {
            0 => x + y,
            1 => x - y,
            _ => x * y,
        };
        let out: Vec<f64> = (0..n).map(|i| f(get(av, i), get(bv, i))).collect();
        let op = match which {
            0 => Op::Add(a, b),
            1 => Op::Sub(a, b),
            _ => Op::Mul(a, b),
        };
        self.record(Tensor::from_parts(shape, out), op, &[a, b], what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 1)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, 2)
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.value(x).map(|v| scale * v + shift);
        self.record(out, Op::Affine(x, scale), &[x], "affine")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.record(out, Op::Sigmoid(x), &[x], "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        self.record(out, Op::Tanh(x), &[x], "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.record(out, Op::Relu(x), &[x], "relu")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.record(out, Op::LeakyRelu(x, slope), &[x], "leaky_relu")
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0) + (-v.abs()).exp().ln_1p());
        self.record(out, Op::Softplus(x), &[x], "softplus")
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::ln);
        self.record(out, Op::Ln(x), &[x], "ln")
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.record(out, Op::Clamp(x, lo, hi), &[x], "clamp")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut out = xv.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..len {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[idx(j)] /= z;
                }
            }
        }
        self.record(Tensor::from_parts(shape, out), Op::Softmax(x, axis), &[x], "softmax")
    }

    // ---- reductions and reshaping --------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.record(Tensor::scalar(s), Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::dim("mean of an empty tensor"));
        }
        let m = t.mean();
        self.record(Tensor::scalar(m), Op::Mean(x), &[x], "mean")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.record(out, Op::Reshape(x), &[x], "reshape")
    }

    /// Flattened concatenation of all inputs.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let n = out.len();
        self.record(Tensor::from_parts(vec![n], out), Op::Concat(parts.to_vec()), parts, "concat")
    }

    /// Row `i` of a rank-2 tensor as a `[1, cols]` tensor.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = match t.shape() {
            [r, c] => (*r, *c),
            s => return Err(Error::dim(format!("row expects rank 2, got {s:?}"))),
        };
        if i >= rows {
            return Err(Error::OutOfRange {
                index: i,
                extent: rows,
            });
        }
        let out = t.data()[i * cols..(i + 1) * cols].to_vec();
        self.record(Tensor::from_parts(vec![1, cols], out), Op::Row(x, i), &[x], "row")
    }

    /// Elementwise mean of equally-shaped tensors.
    pub fn mean_of(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::dim("mean_of needs at least one input"))?;
        let shape = self.shape(first).to_vec();
        let mut acc = vec![0.0; self.value(first).len()];
        for &p in parts {
            let t = self.value(p);
            if t.shape() != shape.as_slice() {
                return Err(Error::dim(format!(
                    "mean_of shapes {:?} and {:?}",
                    shape,
                    t.shape()
                )));
            }
            for (a, b) in acc.iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        let n = parts.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        self.record(Tensor::from_parts(shape, acc), Op::MeanOf(parts.to_vec()), parts, "mean_of")
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (vocab, dim) = match t.shape() {
            [v, d] => (*v, *d),
            s => return Err(Error::dim(format!("embedding table must be [V,d], got {s:?}"))),
        };
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::OutOfRange {
                    index: id,
                    extent: vocab,
                });
            }
            out.extend_from_slice(&t.data()[id * dim..(id + 1) * dim]);
        }
        self.record(
            Tensor::from_parts(vec![ids.len(), dim], out),
            Op::Embedding(table, ids.to_vec()),
            &[table],
            "embedding",
        )
    }

    // ---- spatial ----------------------------------------------------------

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (c_in, h, w) = chw(self.value(input), "conv2d input")?;
        let (c_out, kc, kh, kw) = match self.value(kernel).shape() {
            [a, b, c, d] => (*a, *b, *c, *d),
            s => return Err(Error::dim(format!("conv2d kernel must be rank 4, got {s:?}"))),
        };
        if kc != c_in {
            return Err(Error::dim(format!(
                "conv2d kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        let geom = ConvGeom::new(c_in, h, w, kh, kw, stride, pad).ok_or_else(|| {
            Error::dim(format!(
                "conv2d {kh}x{kw} stride {stride} pad {pad} does not tile {h}x{w}"
            ))
        })?;
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            c_out,
            &geom,
        );
        self.record(
            Tensor::from_parts(vec![c_out, geom.out_h, geom.out_w], out),
            Op::Conv2d {
                input,
                kernel,
                geom,
                c_out,
            },
            &[input, kernel],
            "conv2d",
        )
    }

    pub fn pool(&mut self, input: Var, mode: PoolMode, window: usize, stride: usize) -> Result<Var> {
        let (c, h, w) = chw(self.value(input), "pool input")?;
        let geom = ConvGeom::new(c, h, w, window, window, stride, 0).ok_or_else(|| {
            Error::dim(format!(
                "pool window {window} stride {stride} does not tile {h}x{w}"
            ))
        })?;
        let (out, argmax) =
            kernels::pool_forward(self.value(input).data(), &geom, mode == PoolMode::Max);
        self.record(
            Tensor::from_parts(vec![c, geom.out_h, geom.out_w], out),
            Op::Pool {
                input,
                geom,
                mode,
                argmax,
            },
            &[input],
            "pool",
        )
    }

    /// Nearest-neighbour 2x upsampling of `[c,h,w]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = chw(self.value(x), "upsample2x")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(ch * 2 * h + y) * 2 * w + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        self.record(
            Tensor::from_parts(vec![c, 2 * h, 2 * w], out),
            Op::Upsample2x(x),
            &[x],
            "upsample2x",
        )
    }

    fn channel_op(&mut self, x: Var, per_channel: Var, mul: bool) -> Result<Var> {
        let (c, h, w) = chw(self.value(x), "channel op")?;
        let pc = self.value(per_channel);
        if pc.len() != c {
            return Err(Error::dim(format!(
                "per-channel tensor has {} values for {c} channels",
                pc.len()
            )));
        }
        let hw = h * w;
        let mut out = self.value(x).data().to_vec();
        for (ch, &p) in pc.data().iter().enumerate() {
            for v in &mut out[ch * hw..(ch + 1) * hw] {
                if mul {
                    *v *= p;
                } else {
                    *v += p;
                }
            }
        }
        let (op, what) = if mul {
            (Op::ChannelMul(x, per_channel), "channel_mul")
        } else {
            (Op::ChannelAdd(x, per_channel), "channel_add")
        };
        self.record(Tensor::from_parts(vec![c, h, w], out), op, &[x, per_channel], what)
    }

    /// Adds `bias[c]` to every pixel of channel `c`.
    pub fn channel_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.channel_op(x, bias, false)
    }

    /// Multiplies channel `c` by `scale[c]`.
    pub fn channel_mul(&mut self, x: Var, scale: Var) -> Result<Var> {
        self.channel_op(x, scale, true)
    }

    /// Per-channel normalisation to zero mean and unit variance over the
    /// spatial extent.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (c, h, w) = chw(self.value(x), "instance_norm")?;
        let hw = (h * w) as f64;
        let mut out = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(c);
        for plane in out.chunks_mut(h * w) {
            let mean = plane.iter().sum::<f64>() / hw;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw;
            let is = 1.0 / (var + eps).sqrt();
            plane.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        self.record(
            Tensor::from_parts(vec![c, h, w], out),
            Op::InstanceNorm { input: x, inv_std },
            &[x],
            "instance_norm",
        )
    }

    /// `[c,h,w] -> [c]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = chw(self.value(x), "global_avg_pool")?;
        let hw = (h * w) as f64;
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / hw)
            .collect();
        self.record(Tensor::from_parts(vec![c], out), Op::GlobalAvgPool(x), &[x], "global_avg_pool")
    }

    // ---- backward ---------------------------------------------------------

    /// Populates gradients of `loss` with respect to every node that
    /// requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(&shape));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                self.acc(grads, *a, |da| kernels::matmul_a_bt_acc(gd, bv.data(), da, m, n, k));
                self.acc(grads, *b, |db| kernels::matmul_at_b_acc(av.data(), gd, db, m, k, n));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                self.acc_broadcast(grads, *a, gd, |_, gv| gv);
                self.acc_broadcast(grads, *b, gd, |_, gv| sign * gv);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let get = |t: &Tensor, j: usize| if t.len() == 1 { t.data()[0] } else { t.data()[j] };
                self.acc_broadcast(grads, *a, gd, |j, gv| gv * get(bv, j));
                self.acc_broadcast(grads, *b, gd, |j, gv| gv * get(av, j));
            }
            Op::Affine(x, s) => self.acc_map(grads, *x, gd, |_, gv| gv * s),
            Op::Sigmoid(x) => self.acc_map(grads, *x, gd, |j, gv| {
                let s = y.data()[j];
                gv * s * (1.0 - s)
            }),
            Op::Tanh(x) => self.acc_map(grads, *x, gd, |j, gv| {
                let t = y.data()[j];
                gv * (1.0 - t * t)
            }),
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.acc_map(grads, *x, gd, |j, gv| if xv.data()[j] > 0.0 { gv } else { 0.0 })
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                self.acc_map(grads, *x, gd, |j, gv| {
                    if xv.data()[j] > 0.0 {
                        gv
                    } else {
                        gv * slope
                    }
                })
            }
            Op::Softplus(x) => {
                let xv = self.value(*x);
                self.acc_map(grads, *x, gd, |j, gv| gv * sigmoid(xv.data()[j]))
            }
            Op::Ln(x) => {
                let xv = self.value(*x);
                self.acc_map(grads, *x, gd, |j, gv| gv / xv.data()[j])
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x);
                self.acc_map(grads, *x, gd, |j, gv| {
                    let v = xv.data()[j];
                    if v >= *lo && v <= *hi {
                        gv
                    } else {
                        0.0
                    }
                })
            }
            Op::Softmax(x, axis) => {
                let (outer, len, inner) = axis_split(y.shape(), *axis);
                let yd = y.data();
                let mut dx = vec![0.0; yd.len()];
                for o in 0..outer {
                    for k in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + k;
                        let dot: f64 = (0..len).map(|j| gd[idx(j)] * yd[idx(j)]).sum();
                        for j in 0..len {
                            dx[idx(j)] = yd[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                self.acc_map(grads, *x, &dx, |_, v| v);
            }
            Op::Sum(x) => self.acc(grads, *x, |d| d.iter_mut().for_each(|v| *v += gd[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.acc(grads, *x, |d| d.iter_mut().for_each(|v| *v += gd[0] / n))
            }
            Op::Reshape(x) => self.acc_map(grads, *x, gd, |_, gv| gv),
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let slice = &gd[offset..offset + n];
                    self.acc_map(grads, p, slice, |_, gv| gv);
                    offset += n;
                }
            }
            Op::Row(x, r) => {
                let cols = gd.len();
                self.acc(grads, *x, |d| {
                    for (o, gv) in d[r * cols..(r + 1) * cols].iter_mut().zip(gd) {
                        *o += gv;
                    }
                })
            }
            Op::MeanOf(parts) => {
                let n = parts.len() as f64;
                for &p in parts {
                    self.acc_map(grads, p, gd, |_, gv| gv / n);
                }
            }
            Op::Embedding(table, ids) => {
                let dim = self.shape(*table)[1];
                self.acc(grads, *table, |d| {
                    for (t, &id) in ids.iter().enumerate() {
                        for (o, gv) in d[id * dim..(id + 1) * dim]
                            .iter_mut()
                            .zip(&gd[t * dim..(t + 1) * dim])
                        {
                            *o += gv;
                        }
                    }
                })
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
                c_out,
            } => {
                let positions = geom.positions();
                let patch = geom.patch_len();
                let cols = kernels::im2col(self.value(*input).data(), geom);
                self.acc(grads, *kernel, |dk| {
                    kernels::matmul_a_bt_acc(gd, &cols, dk, *c_out, positions, patch)
                });
                if self.requires_grad(*input) {
                    let mut dcols = vec![0.0; patch * positions];
                    kernels::matmul_at_b_acc(
                        self.value(*kernel).data(),
                        gd,
                        &mut dcols,
                        *c_out,
                        patch,
                        positions,
                    );
                    self.acc(grads, *input, |dx| kernels::col2im_acc(&dcols, geom, dx));
                }
            }
            Op::Pool {
                input,
                geom,
                mode,
                argmax,
            } => match mode {
                PoolMode::Max => self.acc(grads, *input, |dx| {
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src] += gd[o];
                    }
                }),
                PoolMode::Avg => {
                    let area = (geom.kh * geom.kw) as f64;
                    self.acc(grads, *input, |dx| {
                        let mut o = 0;
                        for c in 0..geom.channels {
                            let base = c * geom.height * geom.width;
                            for oy in 0..geom.out_h {
                                for ox in 0..geom.out_w {
                                    let share = gd[o] / area;
                                    for ky in 0..geom.kh {
                                        for kx in 0..geom.kw {
                                            let idx = base
                                                + (oy * geom.stride + ky) * geom.width
                                                + ox * geom.stride
                                                + kx;
                                            dx[idx] += share;
                                        }
                                    }
                                    o += 1;
                                }
                            }
                        }
                    })
                }
            },
            Op::Upsample2x(x) => {
                let (c, h, w) = chw(self.value(*x), "upsample2x")?;
                self.acc(grads, *x, |dx| {
                    for ch in 0..c {
                        for yy in 0..2 * h {
                            for xx in 0..2 * w {
                                dx[(ch * h + yy / 2) * w + xx / 2] += gd[(ch * 2 * h + yy) * 2 * w + xx];
                            }
                        }
                    }
                })
            }
            Op::ChannelAdd(x, b) => {
                self.acc_map(grads, *x, gd, |_, gv| gv);
                let c = self.value(*b).len();
                let hw = gd.len() / c;
                self.acc(grads, *b, |db| {
                    for (ch, d) in db.iter_mut().enumerate() {
                        *d += gd[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
                    }
                })
            }
            Op::ChannelMul(x, s) => {
                let sv = self.value(*s);
                let xv = self.value(*x);
                let c = sv.len();
                let hw = gd.len() / c;
                self.acc_map(grads, *x, gd, |j, gv| gv * sv.data()[j / hw]);
                self.acc(grads, *s, |ds| {
                    for (ch, d) in ds.iter_mut().enumerate() {
                        let r = ch * hw..(ch + 1) * hw;
                        *d += gd[r.clone()]
                            .iter()
                            .zip(&xv.data()[r])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                })
            }
            Op::InstanceNorm { input, inv_std } => {
                let c = inv_std.len();
                let hw = gd.len() / c;
                let n = hw as f64;
                let yd = y.data();
                self.acc(grads, *input, |dx| {
                    for ch in 0..c {
                        let r = ch * hw..(ch + 1) * hw;
                        let gs = &gd[r.clone()];
                        let ys = &yd[r.clone()];
                        let mean_g = gs.iter().sum::<f64>() / n;
                        let mean_gy = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((d, &gv), &yv) in dx[r].iter_mut().zip(gs).zip(ys) {
                            *d += inv_std[ch] * (gv - mean_g - yv * mean_gy);
                        }
                    }
                })
            }
            Op::GlobalAvgPool(x) => {
                let (c, h, w) = chw(self.value(*x), "global_avg_pool")?;
                let hw = h * w;
                self.acc(grads, *x, |dx| {
                    for ch in 0..c {
                        let share = gd[ch] / hw as f64;
                        dx[ch * hw..(ch + 1) * hw].iter_mut().for_each(|v| *v += share);
                    }
                })
            }
            Op::Outer(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let m = bv.len();
                self.acc(grads, *a, |da| {
                    for (i, d) in da.iter_mut().enumerate() {
                        *d += gd[i * m..(i + 1) * m]
                            .iter()
                            .zip(bv.data())
                            .map(|(g, b)| g * b)
                            .sum::<f64>();
                    }
                });
                self.acc(grads, *b, |db| {
                    for (i, &ai) in av.data().iter().enumerate() {
                        for (d, g) in db.iter_mut().zip(&gd[i * m..(i + 1) * m]) {
                            *d += g * ai;
                        }
                    }
                });
            }
        }
        Ok(())
    }

    /// Runs `f` on the gradient buffer of `v`, allocating it on first use.
    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v)));
        f(slot.data_mut());
    }

    fn acc_map(&self, grads: &mut [Option<Tensor>], v: Var, g: &[f64], f: impl Fn(usize, f64) -> f64) {
        self.acc(grads, v, |d| {
            for (j, (o, &gv)) in d.iter_mut().zip(g).enumerate() {
                *o += f(j, gv);
            }
        })
    }

    /// Like `acc_map`, but sums into a single slot when `v` was broadcast.
    fn acc_broadcast(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        g: &[f64],
        f: impl Fn(usize, f64) -> f64,
    ) {
        if self.value(v).len() == 1 && g.len() != 1 {
            let total: f64 = g.iter().enumerate().map(|(j, &gv)| f(j, gv)).sum();
            self.acc(grads, v, |d| d[0] += total);
        } else {
            self.acc_map(grads, v, g, f);
        }
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
