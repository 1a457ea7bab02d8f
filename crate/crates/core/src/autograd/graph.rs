use crate::error::{Error, Result};

use super::kernels::{self, ConvGeom};
use super::{Element, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    L1,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        batch: usize,
    },
    AvgPool2 {
        x: Var,
    },
    Interp {
        x: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[1, h, w]` gate times `[C, h, w]` features.
    MulBroadcast {
        gate: Var,
        x: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Scale(Var, S),
    AddScalar(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Loss {
        kind: LossKind,
        pred: Var,
        target: Var,
        mask: Option<Vec<bool>>,
        count: usize,
    },
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    InstanceNorm {
        x: Var,
        inv_std: Vec<S>,
    },
    Correlation {
        left: Var,
        right: Var,
    },
    PoolLastAxis {
        x: Var,
    },
    Lookup {
        vol: Var,
        centers: Vec<S>,
        radius: usize,
    },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::AvgPool2 { .. } => "avg_pool2",
            Op::Interp { .. } => "interp_bilinear",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulBroadcast { .. } => "mul_broadcast",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Softmax { .. } => "softmax",
            Op::Loss {
                kind: LossKind::Mse,
                ..
            } => "mse",
            Op::Loss {
                kind: LossKind::L1,
                ..
            } => "l1",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::Correlation { .. } => "correlation",
            Op::PoolLastAxis { .. } => "pool_last_axis",
            Op::Lookup { .. } => "corr_lookup",
        }
    }
}

struct Node<S> {
    shape: Vec<usize>,
    value: Vec<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Tape of recorded operations. Nodes are appended in execution order, so
/// the tape is always topologically sorted and backward walks it in reverse.
pub struct Graph<S = f32> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    backward_done: bool,
    check_finite: bool,
    fault: Option<String>,
}

impl<S: Element> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &'static str, axis: usize, expected: usize, got: usize) -> Error {
    Error::Dimension {
        op,
        axis,
        expected,
        got,
    }
}

fn rank_err(op: &'static str, expected: usize, shape: &[usize]) -> Error {
    Error::Rank {
        op,
        expected,
        shape: shape.to_vec(),
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(rank_err(op, a.len(), b));
    }
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        if x != y {
            return Err(dim_err(op, i, x, y));
        }
    }
    Ok(())
}

fn add_into<S: Element>(dst: &mut [S], src: &[S]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
}

impl<S: Element> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            check_finite: false,
            fault: None,
        }
    }

    /// Verify every op output is finite, failing with the offending node.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    /// Corrupts the backward rule of the named op (halves its input
    /// gradients). Only useful for exercising the gradient checker.
    pub fn inject_fault(&mut self, op_name: &str) {
        self.fault = Some(op_name.to_string());
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<S>, op: Op<S>, requires_grad: bool) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if self.check_finite && value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: self.nodes.len(),
                op: op.name(),
            });
        }
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> S {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<S> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Records a tensor as a leaf; it is differentiated iff `requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor<S>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
            .expect("leaf tensors are checked on construction")
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<S>) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::contract("constant shape/buffer mismatch"));
        }
        self.push(shape.to_vec(), data, Op::Leaf, false)
    }

    /// Copies a value into a fresh leaf that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::Leaf, false).expect("detached value is already checked")
    }

    // ---------------------------------------------------------------- ops

    /// 2-D cross-correlation. `x` is `[C_in, H, W]` or `[N, C_in, H, W]`,
    /// `w` is `[C_out, C_in, kh, kw]`, `b` is `[C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (batch, cin, h, wd) = match xs.len() {
            3 => (1, xs[0], xs[1], xs[2]),
            4 => (xs[0], xs[1], xs[2], xs[3]),
            _ => return Err(rank_err(OP, 3, &xs)),
        };
        if ws.len() != 4 {
            return Err(rank_err(OP, 4, &ws));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d stride must be positive"));
        }
        let chan_axis = xs.len() - 3;
        if ws[1] != cin {
            return Err(dim_err(OP, chan_axis, ws[1], cin));
        }
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs.len() != 1 {
                return Err(rank_err(OP, 1, bs));
            }
            if bs[0] != ws[0] {
                return Err(dim_err(OP, 0, ws[0], bs[0]));
            }
        }
        if h + 2 * pad < ws[2] {
            return Err(dim_err(OP, chan_axis + 1, ws[2], h + 2 * pad));
        }
        if wd + 2 * pad < ws[3] {
            return Err(dim_err(OP, chan_axis + 2, ws[3], wd + 2 * pad));
        }
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            cout: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
        };
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let in_len = cin * h * wd;
        let mut out = Vec::with_capacity(batch * geom.cout * oh * ow);
        {
            let xv = self.value(x);
            let wv = self.value(w);
            let bv = b.map(|b| self.value(b));
            for n in 0..batch {
                out.extend(kernels::conv2d_forward(
                    &xv[n * in_len..(n + 1) * in_len],
                    wv,
                    bv,
                    &geom,
                ));
            }
        }
        let shape = if xs.len() == 3 {
            vec![geom.cout, oh, ow]
        } else {
            vec![batch, geom.cout, oh, ow]
        };
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(shape, out, Op::Conv2d { x, w, b, geom, batch }, rg)
    }

    /// 2x2 mean pooling over the two trailing axes of `[C, H, W]`. Odd sizes
    /// are padded right/bottom by replicating the last row/column.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(rank_err("avg_pool2", 3, &xs));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        if h == 0 {
            return Err(dim_err("avg_pool2", 1, 1, 0));
        }
        if w == 0 {
            return Err(dim_err("avg_pool2", 2, 1, 0));
        }
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let xv = self.value(x);
        let quarter = S::of(0.25);
        let mut out = vec![S::zero(); c * oh * ow];
        for ch in 0..c {
            let plane = &xv[ch * h * w..(ch + 1) * h * w];
            for oy in 0..oh {
                let (y0, y1) = (2 * oy, (2 * oy + 1).min(h - 1));
                for ox in 0..ow {
                    let (x0, x1) = (2 * ox, (2 * ox + 1).min(w - 1));
                    let s = plane[y0 * w + x0] + plane[y0 * w + x1] + plane[y1 * w + x0] + plane[y1 * w + x1];
                    out[(ch * oh + oy) * ow + ox] = s * quarter;
                }
            }
        }
        let rg = self.rg(x);
        self.push(vec![c, oh, ow], out, Op::AvgPool2 { x }, rg)
    }

    /// Bilinear resize of `[C, h, w]` to `[C, out_h, out_w]` with
    /// align-corners-false sampling.
    pub fn interp_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(rank_err("interp_bilinear", 3, &xs));
        }
        if out_h == 0 || out_w == 0 || xs[1] == 0 || xs[2] == 0 {
            return Err(Error::contract("interp_bilinear needs non-empty sizes"));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let ys: Vec<_> = (0..out_h).map(|i| kernels::bilinear_taps(i, h, out_h)).collect();
        let xt: Vec<_> = (0..out_w).map(|i| kernels::bilinear_taps(i, w, out_w)).collect();
        let xv = self.value(x);
        let mut out = vec![S::zero(); c * out_h * out_w];
        for ch in 0..c {
            let plane = &xv[ch * h * w..(ch + 1) * h * w];
            for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                let ly = S::of(ly);
                for (ox, &(x0, x1, lx)) in xt.iter().enumerate() {
                    let lx = S::of(lx);
                    let top = plane[y0 * w + x0] * (S::one() - lx) + plane[y0 * w + x1] * lx;
                    let bot = plane[y1 * w + x0] * (S::one() - lx) + plane[y1 * w + x1] * lx;
                    out[(ch * out_h + oy) * out_w + ox] = top * (S::one() - ly) + bot * ly;
                }
            }
        }
        let rg = self.rg(x);
        self.push(vec![c, out_h, out_w], out, Op::Interp { x }, rg)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(S, S) -> S, op: Op<S>) -> Result<Var> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let out: Vec<S> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product. The only broadcast allowed is a `[1, h, w]`
    /// operand against a `[C, h, w]` operand (either order).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa == sb {
            return self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b));
        }
        let gate_like = |s: &[usize], t: &[usize]| s.len() == 3 && t.len() == 3 && s[0] == 1 && s[1..] == t[1..];
        let (gate, x) = if gate_like(&sa, &sb) {
            (a, b)
        } else if gate_like(&sb, &sa) {
            (b, a)
        } else {
            same_shape("mul", &sa, &sb)?;
            unreachable!("shapes differ");
        };
        let xs = self.shape(x).to_vec();
        let plane = xs[1] * xs[2];
        let gv = self.value(gate);
        let out: Vec<S> = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * gv[i % plane])
            .collect();
        let rg = self.rg(gate) || self.rg(x);
        self.push(xs, out, Op::MulBroadcast { gate, x }, rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(S) -> S, op: Op<S>) -> Result<Var> {
        let out: Vec<S> = self.value(x).iter().map(|&v| f(v)).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| if v > S::zero() { v } else { S::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| S::one() / (S::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let k = S::of(k);
        self.unary(x, move |v| v * k, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = S::of(c);
        self.unary(x, move |v| v + c, Op::AddScalar(x))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let n = self.scale(x, -1.0)?;
        self.add_scalar(n, 1.0)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() {
            return Err(rank_err("softmax", axis + 1, &xs));
        }
        let (outer, len, inner) = split_axis(&xs, axis);
        let xv = self.value(x);
        let mut out = vec![S::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| xv[idx(k)]).fold(S::neg_infinity(), S::max);
                let mut total = S::zero();
                for k in 0..len {
                    let e = (xv[idx(k)] - m).exp();
                    out[idx(k)] = e;
                    total = total + e;
                }
                for k in 0..len {
                    out[idx(k)] = out[idx(k)] / total;
                }
            }
        }
        let rg = self.rg(x);
        self.push(xs, out, Op::Softmax { x, axis }, rg)
    }

    /// Mean squared / absolute error over the elements where `mask` is
    /// nonzero (all elements when `mask` is `None`).
    pub fn loss(&mut self, kind: LossKind, pred: Var, target: Var, mask: Option<&[S]>) -> Result<Var> {
        let name = match kind {
            LossKind::Mse => "mse",
            LossKind::L1 => "l1",
        };
        same_shape(name, self.shape(pred), self.shape(target))?;
        let n = self.value(pred).len();
        let mask: Option<Vec<bool>> = match mask {
            Some(m) => {
                if m.len() != n {
                    return Err(Error::contract(format!("{name}: mask length {} != {n}", m.len())));
                }
                Some(m.iter().map(|&v| v != S::zero()).collect())
            }
            None => None,
        };
        let count = mask.as_ref().map_or(n, |m| m.iter().filter(|&&b| b).count());
        if count == 0 {
            return Err(Error::EmptyReduction(name));
        }
        let (pv, tv) = (self.value(pred), self.value(target));
        let mut acc = S::zero();
        for i in 0..n {
            if mask.as_ref().is_some_and(|m| !m[i]) {
                continue;
            }
            let d = pv[i] - tv[i];
            acc = acc
                + match kind {
                    LossKind::Mse => d * d,
                    LossKind::L1 => d.abs(),
                };
        }
        let out = acc / S::of(count as f64);
        let rg = self.rg(pred) || self.rg(target);
        self.push(
            vec![],
            vec![out],
            Op::Loss {
                kind,
                pred,
                target,
                mask,
                count,
            },
            rg,
        )
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.loss(LossKind::Mse, pred, target, None)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: S = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(vec![], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::EmptyReduction("mean"));
        }
        let s: S = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(vec![], vec![s / S::of(n as f64)], Op::Mean(x), rg)
    }

    /// Concatenation along axis 0.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::contract("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if base.is_empty() {
            return Err(rank_err("concat", 1, &base));
        }
        let mut lead = 0;
        let mut out = Vec::new();
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len() {
                return Err(rank_err("concat", base.len(), s));
            }
            for ax in 1..s.len() {
                if s[ax] != base[ax] {
                    return Err(dim_err("concat", ax, base[ax], s[ax]));
                }
            }
            lead += s[0];
            out.extend_from_slice(self.value(v));
        }
        let mut shape = base;
        shape[0] = lead;
        let rg = xs.iter().any(|&v| self.rg(v));
        self.push(shape, out, Op::Concat(xs.to_vec()), rg)
    }

    /// Rows `start..start+len` of axis 0.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() {
            return Err(rank_err("slice", 1, &xs));
        }
        if start + len > xs[0] {
            return Err(dim_err("slice", 0, xs[0], start + len));
        }
        let row: usize = xs[1..].iter().product();
        let out = self.value(x)[start * row..(start + len) * row].to_vec();
        let mut shape = xs;
        shape[0] = len;
        let rg = self.rg(x);
        self.push(shape, out, Op::Slice { x, start }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::contract(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        self.push(shape.to_vec(), out, Op::Reshape(x), rg)
    }

    /// Per-channel normalisation over the spatial axes of `[C, H, W]`.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(rank_err("instance_norm", 3, &xs));
        }
        let plane = xs[1] * xs[2];
        if plane == 0 {
            return Err(Error::EmptyReduction("instance_norm"));
        }
        let xv = self.value(x);
        let mut out = vec![S::zero(); xv.len()];
        let mut inv_std = Vec::with_capacity(xs[0]);
        let np = S::of(plane as f64);
        for (src, dst) in xv.chunks(plane).zip(out.chunks_mut(plane)) {
            let mean = src.iter().copied().sum::<S>() / np;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / np;
            let is = S::one() / (var + S::of(eps)).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(x);
        self.push(xs, out, Op::InstanceNorm { x, inv_std }, rg)
    }

    /// Pixelwise correlation volume `[H, W, D]` between `[C, H, W]` feature
    /// maps: `vol[y, x, z] = <left(:, y, x), right(:, y, x - z)> / sqrt(C)`,
    /// zero where `x - z < 0`.
    pub fn correlation(&mut self, left: Var, right: Var, depth: usize) -> Result<Var> {
        let ls = self.shape(left).to_vec();
        if ls.len() != 3 {
            return Err(rank_err("correlation", 3, &ls));
        }
        same_shape("correlation", &ls, self.shape(right))?;
        let (c, h, w) = (ls[0], ls[1], ls[2]);
        if depth == 0 || depth > w {
            return Err(Error::contract(format!(
                "correlation depth {depth} outside 1..={w}"
            )));
        }
        let norm = S::one() / S::of(c as f64).sqrt();
        let (lv, rv) = (self.value(left), self.value(right));
        let mut out = vec![S::zero(); h * w * depth];
        for ch in 0..c {
            let lp = &lv[ch * h * w..(ch + 1) * h * w];
            let rp = &rv[ch * h * w..(ch + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    let l = lp[y * w + x];
                    let cell = &mut out[(y * w + x) * depth..(y * w + x + 1) * depth];
                    for (z, o) in cell.iter_mut().enumerate().take(x + 1) {
                        *o = *o + l * rp[y * w + x - z];
                    }
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * norm);
        let rg = self.rg(left) || self.rg(right);
        self.push(vec![h, w, depth], out, Op::Correlation { left, right }, rg)
    }

    /// Halves the trailing axis by averaging adjacent pairs; an odd tail
    /// element is averaged with itself.
    pub fn pool_last_axis(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().ok_or_else(|| rank_err("pool_last_axis", 1, &xs))?;
        if d == 0 {
            return Err(Error::EmptyReduction("pool_last_axis"));
        }
        let od = d.div_ceil(2);
        let xv = self.value(x);
        let half = S::of(0.5);
        let mut out = Vec::with_capacity(xv.len() / d * od);
        for row in xv.chunks(d) {
            for k in 0..od {
                let (a, b) = (2 * k, (2 * k + 1).min(d - 1));
                out.push((row[a] + row[b]) * half);
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = od;
        let rg = self.rg(x);
        self.push(shape, out, Op::PoolLastAxis { x }, rg)
    }

    /// Samples a `[H, W, D]` volume at `centers[y*W+x] + delta` for
    /// `delta in -radius..=radius` with linear interpolation and edge
    /// clamping. Returns `[2r+1, H, W]`; gradients flow to the volume only.
    pub fn corr_lookup(&mut self, vol: Var, centers: &[S], radius: usize) -> Result<Var> {
        let vs = self.shape(vol).to_vec();
        if vs.len() != 3 {
            return Err(rank_err("corr_lookup", 3, &vs));
        }
        let (h, w, d) = (vs[0], vs[1], vs[2]);
        if centers.len() != h * w {
            return Err(Error::contract(format!(
                "corr_lookup: {} centers for a {h}x{w} volume",
                centers.len()
            )));
        }
        let taps = 2 * radius + 1;
        let vv = self.value(vol);
        let mut out = vec![S::zero(); taps * h * w];
        for p in 0..h * w {
            let cell = &vv[p * d..(p + 1) * d];
            for t in 0..taps {
                let pos = centers[p] + S::of(t as f64 - radius as f64);
                let (i0, i1, lam) = lookup_taps(pos, d);
                out[t * h * w + p] = cell[i0] * (S::one() - lam) + cell[i1] * lam;
            }
        }
        let rg = self.rg(vol);
        self.push(
            vec![taps, h, w],
            out,
            Op::Lookup {
                vol,
                centers: centers.to_vec(),
                radius,
            },
            rg,
        )
    }

    // ----------------------------------------------------------- backward

    /// Reverse-mode sweep from a scalar `loss`. Gradients are kept for
    /// every leaf that requires them; read them with [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let ls = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(ls.to_vec()));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(mut gout) = self.grads[i].take() else {
                continue;
            };
            if self.fault.as_deref() == Some(self.nodes[i].op.name()) {
                gout.iter_mut().for_each(|v| *v = *v * S::of(0.5));
            }
            self.backward_node(i, &gout);
        }
        Ok(())
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Accumulates this graph's gradient for `v` into `t.grad`.
    pub fn write_grad(&self, v: Var, t: &mut Tensor<S>) {
        if let Some(g) = self.grad(v) {
            t.accumulate_grad(g);
        }
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [S], &[Node<S>])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let mut g = self.grads[v.0].take().unwrap_or_else(|| vec![S::zero(); n]);
        f(&mut g, &self.nodes);
        self.grads[v.0] = Some(g);
    }

    fn acc_slice(&mut self, v: Var, src: &[S]) {
        self.acc(v, |g, _| add_into(g, src));
    }

    fn backward_node(&mut self, i: usize, gout: &[S]) {
        // The op is moved out temporarily so its payload can be borrowed
        // while gradient buffers of other nodes are mutated.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom, batch } => {
                let (x, w) = (*x, *w);
                let in_len = geom.cin * geom.h * geom.w;
                let out_len = geom.cout * geom.out_h() * geom.out_w();
                let need_x = self.rg(x);
                let need_w = self.rg(w);
                let mut dx = need_x.then(|| vec![S::zero(); in_len * batch]);
                let mut dw = need_w.then(|| vec![S::zero(); self.nodes[w.0].value.len()]);
                let mut db = b.filter(|b| self.rg(*b)).map(|_| vec![S::zero(); geom.cout]);
                {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    for n in 0..*batch {
                        kernels::conv2d_backward(
                            &xv[n * in_len..(n + 1) * in_len],
                            wv,
                            &gout[n * out_len..(n + 1) * out_len],
                            geom,
                            dx.as_mut().map(|d| &mut d[n * in_len..(n + 1) * in_len]),
                            dw.as_deref_mut(),
                            db.as_deref_mut(),
                        );
                    }
                }
                if let Some(d) = dx {
                    self.acc_slice(x, &d);
                }
                if let Some(d) = dw {
                    self.acc_slice(w, &d);
                }
                if let (Some(b), Some(d)) = (b, db) {
                    self.acc_slice(*b, &d);
                }
            }
            Op::AvgPool2 { x } => {
                let xs = self.nodes[x.0].shape.clone();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
                let quarter = S::of(0.25);
                self.acc(*x, |g, _| {
                    for ch in 0..c {
                        for oy in 0..oh {
                            let (y0, y1) = (2 * oy, (2 * oy + 1).min(h - 1));
                            for ox in 0..ow {
                                let (x0, x1) = (2 * ox, (2 * ox + 1).min(w - 1));
                                let v = gout[(ch * oh + oy) * ow + ox] * quarter;
                                let base = ch * h * w;
                                for &(yy, xx) in &[(y0, x0), (y0, x1), (y1, x0), (y1, x1)] {
                                    g[base + yy * w + xx] = g[base + yy * w + xx] + v;
                                }
                            }
                        }
                    }
                });
            }
            Op::Interp { x } => {
                let xs = self.nodes[x.0].shape.clone();
                let os = self.nodes[i].shape.clone();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (out_h, out_w) = (os[1], os[2]);
                let ys: Vec<_> = (0..out_h).map(|k| kernels::bilinear_taps(k, h, out_h)).collect();
                let xt: Vec<_> = (0..out_w).map(|k| kernels::bilinear_taps(k, w, out_w)).collect();
                self.acc(*x, |g, _| {
                    for ch in 0..c {
                        let base = ch * h * w;
                        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                            let ly = S::of(ly);
                            for (ox, &(x0, x1, lx)) in xt.iter().enumerate() {
                                let lx = S::of(lx);
                                let go = gout[(ch * out_h + oy) * out_w + ox];
                                let top = go * (S::one() - ly);
                                let bot = go * ly;
                                g[base + y0 * w + x0] = g[base + y0 * w + x0] + top * (S::one() - lx);
                                g[base + y0 * w + x1] = g[base + y0 * w + x1] + top * lx;
                                g[base + y1 * w + x0] = g[base + y1 * w + x0] + bot * (S::one() - lx);
                                g[base + y1 * w + x1] = g[base + y1 * w + x1] + bot * lx;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc_slice(*a, gout);
                self.acc_slice(*b, gout);
            }
            Op::Sub(a, b) => {
                self.acc_slice(*a, gout);
                self.acc(*b, |g, _| g.iter_mut().zip(gout).for_each(|(d, &s)| *d = *d - s));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.acc(a, |g, n| {
                    for ((d, &s), &o) in g.iter_mut().zip(gout).zip(&n[b.0].value) {
                        *d = *d + s * o;
                    }
                });
                self.acc(b, |g, n| {
                    for ((d, &s), &o) in g.iter_mut().zip(gout).zip(&n[a.0].value) {
                        *d = *d + s * o;
                    }
                });
            }
            Op::MulBroadcast { gate, x } => {
                let (gate, x) = (*gate, *x);
                let plane = self.nodes[gate.0].value.len();
                self.acc(gate, |g, n| {
                    for (k, (&s, &xv)) in gout.iter().zip(&n[x.0].value).enumerate() {
                        g[k % plane] = g[k % plane] + s * xv;
                    }
                });
                self.acc(x, |g, n| {
                    let gv = &n[gate.0].value;
                    for (k, (d, &s)) in g.iter_mut().zip(gout).enumerate() {
                        *d = *d + s * gv[k % plane];
                    }
                });
            }
            Op::Relu(x) => {
                self.acc(*x, |g, n| {
                    for ((d, &s), &v) in g.iter_mut().zip(gout).zip(&n[x.0].value) {
                        if v > S::zero() {
                            *d = *d + s;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                self.acc(*x, |g, n| {
                    for ((d, &s), &y) in g.iter_mut().zip(gout).zip(&n[i].value) {
                        *d = *d + s * y * (S::one() - y);
                    }
                });
            }
            Op::Tanh(x) => {
                self.acc(*x, |g, n| {
                    for ((d, &s), &y) in g.iter_mut().zip(gout).zip(&n[i].value) {
                        *d = *d + s * (S::one() - y * y);
                    }
                });
            }
            Op::Scale(x, k) => {
                let k = *k;
                self.acc(*x, |g, _| g.iter_mut().zip(gout).for_each(|(d, &s)| *d = *d + s * k));
            }
            Op::AddScalar(x) => self.acc_slice(*x, gout),
            Op::Softmax { x, axis } => {
                let shape = self.nodes[i].shape.clone();
                let (outer, len, inner) = split_axis(&shape, *axis);
                self.acc(*x, |g, n| {
                    let y = &n[i].value;
                    for o in 0..outer {
                        for q in 0..inner {
                            let idx = |k: usize| (o * len + k) * inner + q;
                            let dot: S = (0..len).map(|k| gout[idx(k)] * y[idx(k)]).sum();
                            for k in 0..len {
                                g[idx(k)] = g[idx(k)] + y[idx(k)] * (gout[idx(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Loss {
                kind,
                pred,
                target,
                mask,
                count,
            } => {
                let scale = gout[0] / S::of(*count as f64);
                let diff: Vec<S> = {
                    let pv = &self.nodes[pred.0].value;
                    let tv = &self.nodes[target.0].value;
                    pv.iter()
                        .zip(tv)
                        .enumerate()
                        .map(|(k, (&p, &t))| {
                            if mask.as_ref().is_some_and(|m| !m[k]) {
                                return S::zero();
                            }
                            let d = p - t;
                            match kind {
                                LossKind::Mse => S::of(2.0) * d * scale,
                                LossKind::L1 => sign(d) * scale,
                            }
                        })
                        .collect()
                };
                self.acc_slice(*pred, &diff);
                self.acc(*target, |g, _| g.iter_mut().zip(&diff).for_each(|(d, &s)| *d = *d - s));
            }
            Op::Sum(x) => {
                let s = gout[0];
                self.acc(*x, |g, _| g.iter_mut().for_each(|d| *d = *d + s));
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len();
                let s = gout[0] / S::of(n as f64);
                self.acc(*x, |g, _| g.iter_mut().for_each(|d| *d = *d + s));
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for &v in xs {
                    let n = self.nodes[v.0].value.len();
                    self.acc_slice(v, &gout[off..off + n]);
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let row: usize = self.nodes[x.0].shape[1..].iter().product();
                let off = start * row;
                self.acc(*x, |g, _| add_into(&mut g[off..off + gout.len()], gout));
            }
            Op::Reshape(x) => self.acc_slice(*x, gout),
            Op::InstanceNorm { x, inv_std } => {
                let plane = self.nodes[x.0].shape[1] * self.nodes[x.0].shape[2];
                let np = S::of(plane as f64);
                self.acc(*x, |g, n| {
                    let y = &n[i].value;
                    for (c, &is) in inv_std.iter().enumerate() {
                        let r = c * plane..(c + 1) * plane;
                        let (yc, gc) = (&y[r.clone()], &gout[r.clone()]);
                        let mg = gc.iter().copied().sum::<S>() / np;
                        let mgy = gc.iter().zip(yc).map(|(&a, &b)| a * b).sum::<S>() / np;
                        for ((d, &go), &yv) in g[r].iter_mut().zip(gc).zip(yc) {
                            *d = *d + is * (go - mg - yv * mgy);
                        }
                    }
                });
            }
            Op::Correlation { left, right } => {
                let (left, right) = (*left, *right);
                let ls = self.nodes[left.0].shape.clone();
                let (c, h, w) = (ls[0], ls[1], ls[2]);
                let depth = self.nodes[i].shape[2];
                let norm = S::one() / S::of(c as f64).sqrt();
                let go: Vec<S> = gout.iter().map(|&v| v * norm).collect();
                self.acc(left, |g, n| {
                    let rv = &n[right.0].value;
                    for ch in 0..c {
                        let base = ch * h * w;
                        for y in 0..h {
                            for x in 0..w {
                                let cell = &go[(y * w + x) * depth..(y * w + x + 1) * depth];
                                let mut s = S::zero();
                                for (z, &gz) in cell.iter().enumerate().take(x + 1) {
                                    s = s + gz * rv[base + y * w + x - z];
                                }
                                g[base + y * w + x] = g[base + y * w + x] + s;
                            }
                        }
                    }
                });
                self.acc(right, |g, n| {
                    let lv = &n[left.0].value;
                    for ch in 0..c {
                        let base = ch * h * w;
                        for y in 0..h {
                            for x in 0..w {
                                let l = lv[base + y * w + x];
                                let cell = &go[(y * w + x) * depth..(y * w + x + 1) * depth];
                                for (z, &gz) in cell.iter().enumerate().take(x + 1) {
                                    let k = base + y * w + x - z;
                                    g[k] = g[k] + gz * l;
                                }
                            }
                        }
                    }
                });
            }
            Op::PoolLastAxis { x } => {
                let d = *self.nodes[x.0].shape.last().unwrap();
                let od = d.div_ceil(2);
                let half = S::of(0.5);
                self.acc(*x, |g, _| {
                    for (row, grow) in g.chunks_mut(d).zip(gout.chunks(od)) {
                        for (k, &s) in grow.iter().enumerate() {
                            let (a, b) = (2 * k, (2 * k + 1).min(d - 1));
                            row[a] = row[a] + s * half;
                            row[b] = row[b] + s * half;
                        }
                    }
                });
            }
            Op::Lookup { vol, centers, radius } => {
                let vs = self.nodes[vol.0].shape.clone();
                let (h, w, d) = (vs[0], vs[1], vs[2]);
                let taps = 2 * radius + 1;
                self.acc(*vol, |g, _| {
                    for (p, &ctr) in centers.iter().enumerate() {
                        for t in 0..taps {
                            let pos = ctr + S::of(t as f64 - *radius as f64);
                            let (i0, i1, lam) = lookup_taps(pos, d);
                            let s = gout[t * h * w + p];
                            g[p * d + i0] = g[p * d + i0] + s * (S::one() - lam);
                            g[p * d + i1] = g[p * d + i1] + s * lam;
                        }
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }
}

fn sign<S: Element>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Interpolation taps for a position along an axis of length `d`, clamped
/// to `[0, d-1]`.
fn lookup_taps<S: Element>(pos: S, d: usize) -> (usize, usize, S) {
    let hi = S::of((d - 1) as f64);
    let p = pos.max(S::zero()).min(hi);
    let i0 = p.floor().to_usize().unwrap_or(0).min(d - 1);
    let i1 = (i0 + 1).min(d - 1);
    let lam = if i1 == i0 { S::zero() } else { p - S::of(i0 as f64) };
    (i0, i1, lam)
}
