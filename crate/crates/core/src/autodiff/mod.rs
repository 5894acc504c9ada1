//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records primitive applications in execution order; since every
//! node only refers to earlier nodes, the record is topologically sorted and
//! [`Tape::backward`] walks it in reverse. Gradients of values consumed more
//! than once are summed.

pub(crate) mod kernels;
mod tensor;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::LN_2;

#[allow(unused_imports)] // the inherent methods shadow it when std is linked
use num_traits::Float;

use crate::geometry::dist2;
use crate::{Error, Result};

pub use tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with the supplied running statistics.
    Infer,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    SegmentMax { x: Var, argmax: Vec<usize> },
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulRow { x: Var, v: Var },
    ChannelLinear { x: Var, w: Var, b: Var },
    Reshape(Var),
    Sum(Var),
    RowSum(Var),
    RoundStraightThrough(Var),
    BinProbability { lower: Var, upper: Var },
    NegLog2 { p: Var, floor: f64 },
    Chamfer { a: Var, b: Var, nn_ab: Vec<usize>, nn_ba: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics computed by a training-mode batch-norm node.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Record of primitive applications.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    stats: Vec<(Var, BatchStats)>,
}

/// Gradients of a scalar with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` is not a leaf that requires grad.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zero-filled when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn shape_err(op: &'static str, detail: alloc::string::String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Statistics of every training-mode batch-norm node, in recording order.
    pub fn batch_stats(&self) -> &[(Var, BatchStats)] {
        &self.stats
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(shape_err(op, format!("expected a 2-D tensor, got shape {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// `out[i, j] = sum_k x[i, k] * w[k, j] + b[j]`
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, a) = self.dims2(x, "linear")?;
        let (wa, wb) = self.dims2(w, "linear")?;
        if a != wa {
            return Err(shape_err("linear", format!("input width {a} vs weight rows {wa}")));
        }
        let mut out = vec![0.0; n * wb];
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.shape() != [wb] {
                return Err(shape_err("linear", format!("bias shape {:?}, expected [{wb}]", bias.shape())));
            }
            for row in out.chunks_exact_mut(wb) {
                row.copy_from_slice(bias.data());
            }
        }
        kernels::matmul_acc(self.value(x).data(), self.value(w).data(), &mut out, n, a, wb);
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        Ok(self.push(Tensor::from_parts(vec![n, wb], out), Op::Linear { x, w, b }, &inputs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|t| t.max(0.0));
        self.push(v, Op::Relu(x), &[x])
    }

    /// Per-channel batch normalization of an `[n, c]` input.
    ///
    /// In [`NormMode::Train`] the batch mean and biased variance are used and
    /// recorded (see [`Tape::batch_stats`]); in [`NormMode::Infer`] the given
    /// running statistics are used and treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode,
        running: (&[f64], &[f64]),
        eps: f64,
    ) -> Result<Var> {
        let (n, c) = self.dims2(x, "batch_norm")?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(shape_err(
                    "batch_norm",
                    format!("{name} shape {:?}, expected [{c}]", self.value(v).shape()),
                ));
            }
        }
        let xs = self.value(x).data();
        let (mean, var) = match mode {
            NormMode::Train => {
                if n < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "batch norm in training mode needs at least 2 rows, got {n}"
                    )));
                }
                let mut mean = vec![0.0; c];
                for row in xs.chunks_exact(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; c];
                for row in xs.chunks_exact(c) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                (mean, var)
            }
            NormMode::Infer => {
                if running.0.len() != c || running.1.len() != c {
                    return Err(shape_err("batch_norm", format!("running statistics must have {c} entries")));
                }
                (running.0.to_vec(), running.1.to_vec())
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; n * c];
        let mut out = vec![0.0; n * c];
        for ((xrow, hrow), orow) in xs.chunks_exact(c).zip(xhat.chunks_exact_mut(c)).zip(out.chunks_exact_mut(c)) {
            for j in 0..c {
                let h = (xrow[j] - mean[j]) * inv_std[j];
                hrow[j] = h;
                orow[j] = g[j] * h + bt[j];
            }
        }
        let train = mode == NormMode::Train;
        let v = self.push(
            Tensor::from_parts(vec![n, c], out),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train },
            &[x, gamma, beta],
        );
        if train {
            self.stats.push((v, BatchStats { mean, var }));
        }
        Ok(v)
    }

    /// Column-wise max over each of `segments` consecutive row blocks.
    ///
    /// `[segments * n, k] -> [segments, k]`. The gradient goes to the first
    /// maximal row of each column.
    pub fn segment_max(&mut self, x: Var, segments: usize) -> Result<Var> {
        let (rows, k) = self.dims2(x, "segment_max")?;
        if segments == 0 || rows % segments != 0 || rows == 0 {
            return Err(shape_err("segment_max", format!("{rows} rows do not split into {segments} segments")));
        }
        let n = rows / segments;
        let xs = self.value(x).data();
        let mut out = vec![0.0; segments * k];
        let mut argmax = vec![0usize; segments * k];
        for s in 0..segments {
            for j in 0..k {
                let mut best = s * n;
                for r in s * n + 1..(s + 1) * n {
                    if xs[r * k + j] > xs[best * k + j] {
                        best = r;
                    }
                }
                out[s * k + j] = xs[best * k + j];
                argmax[s * k + j] = best;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![segments, k], out), Op::SegmentMax { x, argmax }, &[x]))
    }

    /// Feature-wise max over the rows of an `[n, k]` input, giving `[k]`.
    pub fn max_pool_points(&mut self, x: Var) -> Result<Var> {
        let pooled = self.segment_max(x, 1)?;
        let k = self.value(pooled).len();
        self.reshape(pooled, &[k])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(Float::tanh);
        self.push(v, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.value(x).map(softplus);
        self.push(v, Op::Softplus(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x).map(|t| t * factor);
        self.push(v, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Var {
        let v = self.value(x).map(|t| t + offset);
        self.push(v, Op::AddScalar(x), &[x])
    }

    /// Multiplies every row of an `[n, c]` input by a `[c]` vector.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (n, c) = self.dims2(x, "mul_row")?;
        if self.value(v).shape() != [c] {
            return Err(shape_err("mul_row", format!("row vector shape {:?}, expected [{c}]", self.value(v).shape())));
        }
        let vs = self.value(v).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(c) {
            for (o, &s) in row.iter_mut().zip(vs) {
                *o *= s;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, c], out), Op::MulRow { x, v }, &[x, v]))
    }

    /// Independent small affine maps per channel.
    ///
    /// `x: [n, C * din]`, `w: [C, dout, din]`, `b: [C * dout]`, giving
    /// `out[r, c * dout + o] = sum_i w[c, o, i] * x[r, c * din + i] + b[c * dout + o]`.
    pub fn channel_linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, width) = self.dims2(x, "channel_linear")?;
        let ws = self.value(w).shape();
        if ws.len() != 3 {
            return Err(shape_err("channel_linear", format!("weight must be 3-D, got {ws:?}")));
        }
        let (c, dout, din) = (ws[0], ws[1], ws[2]);
        if width != c * din {
            return Err(shape_err("channel_linear", format!("input width {width} vs {c} channels x {din}")));
        }
        if self.value(b).shape() != [c * dout] {
            return Err(shape_err("channel_linear", format!("bias shape {:?}, expected [{}]", self.value(b).shape(), c * dout)));
        }
        let (xs, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; n * c * dout];
        for (xrow, orow) in xs.chunks_exact(width).zip(out.chunks_exact_mut(c * dout)) {
            for ch in 0..c {
                let xin = &xrow[ch * din..(ch + 1) * din];
                for o in 0..dout {
                    let wrow = &wd[(ch * dout + o) * din..(ch * dout + o + 1) * din];
                    let acc: f64 = wrow.iter().zip(xin).map(|(a, b)| a * b).sum();
                    orow[ch * dout + o] = acc + bd[ch * dout + o];
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, c * dout], out), Op::ChannelLinear { x, w, b }, &[x, w, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Row sums of an `[n, c]` input, giving `[n]`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let (n, c) = self.dims2(x, "row_sum")?;
        let out = self.value(x).data().chunks_exact(c).map(|r| r.iter().sum()).collect();
        Ok(self.push(Tensor::from_parts(vec![n], out), Op::RowSum(x), &[x]))
    }

    /// Rounds half away from zero; the backward pass treats it as identity.
    pub fn round_straight_through(&mut self, x: Var) -> Var {
        let v = self.value(x).map(Float::round);
        self.push(v, Op::RoundStraightThrough(x), &[x])
    }

    /// `sigmoid(upper) - sigmoid(lower)` for logits with `upper >= lower`,
    /// evaluated on whichever side of the sigmoid avoids cancellation.
    pub fn bin_probability(&mut self, lower: Var, upper: Var) -> Result<Var> {
        self.same_shape(lower, upper, "bin_probability")?;
        let v = self.value(lower).zip_map(self.value(upper), |l, u| {
            let s = if l + u > 0.0 { -1.0 } else { 1.0 };
            (sigmoid(s * u) - sigmoid(s * l)).abs()
        });
        Ok(self.push(v, Op::BinProbability { lower, upper }, &[lower, upper]))
    }

    /// `-log2(max(p, floor))` elementwise.
    pub fn neg_log2(&mut self, p: Var, floor: f64) -> Var {
        let v = self.value(p).map(|x| -x.max(floor).log2());
        self.push(v, Op::NegLog2 { p, floor }, &[p])
    }

    /// Chamfer distance per batch item with nearest neighbours held fixed.
    ///
    /// `a: [B, 3 * na]`, `b: [B, 3 * nb]` (row-major points), giving `[B]` with
    /// `sum_x min_y |x - y|^2 + sum_y min_x |x - y|^2` for each item.
    pub fn chamfer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, wa) = self.dims2(a, "chamfer")?;
        let (bb, wb) = self.dims2(b, "chamfer")?;
        if ba != bb || wa % 3 != 0 || wb % 3 != 0 || wa == 0 || wb == 0 {
            return Err(shape_err("chamfer", format!("[{ba}, {wa}] vs [{bb}, {wb}]")));
        }
        let (na, nb) = (wa / 3, wb / 3);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; ba];
        let mut nn_ab = vec![0; ba * na];
        let mut nn_ba = vec![0; ba * nb];
        for item in 0..ba {
            let pa = as_points(&ad[item * wa..(item + 1) * wa]);
            let pb = as_points(&bd[item * wb..(item + 1) * wb]);
            let mut total = 0.0;
            for (i, &p) in pa.iter().enumerate() {
                let (j, d) = brute_nearest(p, &pb);
                nn_ab[item * na + i] = j;
                total += d;
            }
            for (j, &q) in pb.iter().enumerate() {
                let (i, d) = brute_nearest(q, &pa);
                nn_ba[item * nb + j] = i;
                total += d;
            }
            out[item] = total;
        }
        Ok(self.push(Tensor::from_parts(vec![ba], out), Op::Chamfer { a, b, nn_ab, nn_ba }, &[a, b]))
    }

    /// Backpropagates from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(shape_err("backward", format!("output must be scalar, got shape {:?}", self.value(output).shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(vec![1.0]);
        }
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backward_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        macro_rules! with_grad {
            ($v:expr, |$buf:ident| $body:block) => {
                if let Some($buf) = grad_slot(nodes, grads, $v) $body
            };
        }
        let val = |v: Var| nodes[v.0].value.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let s = nodes[w.0].value.shape();
                let (a, m) = (s[0], s[1]);
                let n = g.len() / m;
                with_grad!(*x, |gx| {
                    let wt = kernels::transpose(val(*w), a, m);
                    kernels::matmul_acc(g, &wt, gx, n, m, a);
                });
                with_grad!(*w, |gw| {
                    kernels::matmul_tn_acc(val(*x), g, gw, n, a, m);
                });
                if let Some(b) = b {
                    with_grad!(*b, |gb| {
                        for row in g.chunks_exact(m) {
                            for (o, &v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    });
                }
            }
            Op::Relu(x) => with_grad!(*x, |gx| {
                for ((o, &gi), &xi) in gx.iter_mut().zip(g).zip(val(*x)) {
                    if xi > 0.0 {
                        *o += gi;
                    }
                }
            }),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let c = inv_std.len();
                let n = g.len() / c;
                let gam = val(*gamma);
                let mut sum_g = vec![0.0; c];
                let mut sum_gh = vec![0.0; c];
                for (grow, hrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        sum_g[j] += grow[j];
                        sum_gh[j] += grow[j] * hrow[j];
                    }
                }
                with_grad!(*beta, |gb| {
                    gb.iter_mut().zip(&sum_g).for_each(|(o, v)| *o += v);
                });
                with_grad!(*gamma, |gg| {
                    gg.iter_mut().zip(&sum_gh).for_each(|(o, v)| *o += v);
                });
                with_grad!(*x, |gx| {
                    let nf = n as f64;
                    for ((orow, grow), hrow) in gx.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            let k = gam[j] * inv_std[j];
                            orow[j] += if *train {
                                k * (grow[j] - sum_g[j] / nf - hrow[j] * sum_gh[j] / nf)
                            } else {
                                k * grow[j]
                            };
                        }
                    }
                });
            }
            Op::SegmentMax { x, argmax } => with_grad!(*x, |gx| {
                let k = nodes[x.0].value.shape()[1];
                for (idx, (&row, &gi)) in argmax.iter().zip(g).enumerate() {
                    gx[row * k + idx % k] += gi;
                }
            }),
            Op::Tanh(x) => with_grad!(*x, |gx| {
                for ((o, &gi), &y) in gx.iter_mut().zip(g).zip(out) {
                    *o += gi * (1.0 - y * y);
                }
            }),
            Op::Sigmoid(x) => with_grad!(*x, |gx| {
                for ((o, &gi), &y) in gx.iter_mut().zip(g).zip(out) {
                    *o += gi * y * (1.0 - y);
                }
            }),
            Op::Softplus(x) => with_grad!(*x, |gx| {
                for ((o, &gi), &xi) in gx.iter_mut().zip(g).zip(val(*x)) {
                    *o += gi * sigmoid(xi);
                }
            }),
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    with_grad!(v, |gv| {
                        gv.iter_mut().zip(g).for_each(|(o, &gi)| *o += gi);
                    });
                }
            }
            Op::Mul(a, b) => {
                with_grad!(*a, |ga| {
                    for ((o, &gi), &bv) in ga.iter_mut().zip(g).zip(val(*b)) {
                        *o += gi * bv;
                    }
                });
                with_grad!(*b, |gb| {
                    for ((o, &gi), &av) in gb.iter_mut().zip(g).zip(val(*a)) {
                        *o += gi * av;
                    }
                });
            }
            Op::Scale(x, f) => with_grad!(*x, |gx| {
                gx.iter_mut().zip(g).for_each(|(o, &gi)| *o += gi * f);
            }),
            Op::AddScalar(x) | Op::Reshape(x) | Op::RoundStraightThrough(x) => with_grad!(*x, |gx| {
                gx.iter_mut().zip(g).for_each(|(o, &gi)| *o += gi);
            }),
            Op::MulRow { x, v } => {
                let c = nodes[v.0].value.len();
                with_grad!(*x, |gx| {
                    for (orow, grow) in gx.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                        for ((o, &gi), &s) in orow.iter_mut().zip(grow).zip(val(*v)) {
                            *o += gi * s;
                        }
                    }
                });
                with_grad!(*v, |gv| {
                    for (xrow, grow) in val(*x).chunks_exact(c).zip(g.chunks_exact(c)) {
                        for ((o, &gi), &xv) in gv.iter_mut().zip(grow).zip(xrow) {
                            *o += gi * xv;
                        }
                    }
                });
            }
            Op::ChannelLinear { x, w, b } => {
                let ws = nodes[w.0].value.shape();
                let (c, dout, din) = (ws[0], ws[1], ws[2]);
                let width = c * din;
                let wd = val(*w);
                let xs = val(*x);
                with_grad!(*b, |gb| {
                    for grow in g.chunks_exact(c * dout) {
                        gb.iter_mut().zip(grow).for_each(|(o, &gi)| *o += gi);
                    }
                });
                with_grad!(*w, |gw| {
                    for (xrow, grow) in xs.chunks_exact(width).zip(g.chunks_exact(c * dout)) {
                        for ch in 0..c {
                            for o in 0..dout {
                                let gi = grow[ch * dout + o];
                                for i in 0..din {
                                    gw[(ch * dout + o) * din + i] += gi * xrow[ch * din + i];
                                }
                            }
                        }
                    }
                });
                with_grad!(*x, |gx| {
                    for (xrow, grow) in gx.chunks_exact_mut(width).zip(g.chunks_exact(c * dout)) {
                        for ch in 0..c {
                            for o in 0..dout {
                                let gi = grow[ch * dout + o];
                                for i in 0..din {
                                    xrow[ch * din + i] += gi * wd[(ch * dout + o) * din + i];
                                }
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => with_grad!(*x, |gx| {
                gx.iter_mut().for_each(|o| *o += g[0]);
            }),
            Op::RowSum(x) => with_grad!(*x, |gx| {
                let c = nodes[x.0].value.shape()[1];
                for (row, &gi) in gx.chunks_exact_mut(c).zip(g) {
                    row.iter_mut().for_each(|o| *o += gi);
                }
            }),
            Op::BinProbability { lower, upper } => {
                let (ls, us) = (val(*lower), val(*upper));
                let mut du = vec![0.0; g.len()];
                let mut dl = vec![0.0; g.len()];
                for i in 0..g.len() {
                    let (l, u) = (ls[i], us[i]);
                    let s = if l + u > 0.0 { -1.0 } else { 1.0 };
                    let (su, sl) = (sigmoid(s * u), sigmoid(s * l));
                    let sign = if su - sl >= 0.0 { 1.0 } else { -1.0 };
                    du[i] = g[i] * sign * s * su * (1.0 - su);
                    dl[i] = -g[i] * sign * s * sl * (1.0 - sl);
                }
                with_grad!(*upper, |gu| {
                    gu.iter_mut().zip(&du).for_each(|(o, v)| *o += v);
                });
                with_grad!(*lower, |gl| {
                    gl.iter_mut().zip(&dl).for_each(|(o, v)| *o += v);
                });
            }
            Op::NegLog2 { p, floor } => with_grad!(*p, |gp| {
                for ((o, &gi), &pv) in gp.iter_mut().zip(g).zip(val(*p)) {
                    if pv > *floor {
                        *o -= gi / (pv * LN_2);
                    }
                }
            }),
            Op::Chamfer { a, b, nn_ab, nn_ba } => {
                let wa = nodes[a.0].value.shape()[1];
                let wb = nodes[b.0].value.shape()[1];
                let (na, nb) = (wa / 3, wb / 3);
                let (ad, bd) = (val(*a), val(*b));
                // d/dx |x - y|^2 = 2 (x - y); both endpoints of every matched pair move
                let mut ga_local = vec![0.0; ad.len()];
                let mut gb_local = vec![0.0; bd.len()];
                for (item, &gi) in g.iter().enumerate() {
                    let (oa, ob) = (item * wa, item * wb);
                    for i in 0..na {
                        let j = nn_ab[item * na + i];
                        for k in 0..3 {
                            let d = 2.0 * gi * (ad[oa + 3 * i + k] - bd[ob + 3 * j + k]);
                            ga_local[oa + 3 * i + k] += d;
                            gb_local[ob + 3 * j + k] -= d;
                        }
                    }
                    for j in 0..nb {
                        let i = nn_ba[item * nb + j];
                        for k in 0..3 {
                            let d = 2.0 * gi * (bd[ob + 3 * j + k] - ad[oa + 3 * i + k]);
                            gb_local[ob + 3 * j + k] += d;
                            ga_local[oa + 3 * i + k] -= d;
                        }
                    }
                }
                with_grad!(*a, |gav| {
                    gav.iter_mut().zip(&ga_local).for_each(|(o, v)| *o += v);
                });
                with_grad!(*b, |gbv| {
                    gbv.iter_mut().zip(&gb_local).for_each(|(o, v)| *o += v);
                });
            }
        }
    }
}

/// Gradient buffer of `v`, allocated on first use; `None` if `v` does not
/// participate in differentiation.
fn grad_slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn as_points(flat: &[f64]) -> Vec<[f64; 3]> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn brute_nearest(p: [f64; 3], set: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, f64::infinity());
    for (j, &q) in set.iter().enumerate() {
        let d = dist2(p, q);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[cfg(test)]
mod tests;
