use std::sync::Arc;

use super::conv::{self, ConvDims, ConvGeom};
use super::warp::WarpMap;
use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Log,
    Abs,
    /// `ln(1 + e^x)`, evaluated without overflow.
    Softplus,
    Sqrt,
    /// Clamp to `[lo, hi]`; gradient 1 strictly inside, 0 outside.
    Clamp(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    /// Sum of absolute values.
    L1,
    /// Sum of squares.
    L2Sq,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op<T: Float> {
    Leaf,
    Binary(Binary, Var, Var),
    Scale(Var, T),
    Offset(Var),
    Unary(Unary, Var),
    Conv { x: Var, w: Var, dims: ConvDims },
    ConvTransposed { x: Var, w: Var, dims: ConvDims },
    Reduce { x: Var, kind: ReduceKind, mask: [bool; 4] },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Vec<Var>),
    SliceChannels { x: Var, start: usize },
    Reshape(Var),
    SpectralNorm { w: Var, u: Vec<T>, v: Vec<T>, sigma: T },
    Warp { x: Var, map: Arc<WarpMap> },
}

struct Node<T: Float> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run tape. Nodes are appended in evaluation order, so parents
/// always precede children and backward is a single reverse sweep.
pub struct Graph<T: Float = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to trainable leaves.
pub struct Gradients<T: Float> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        requires_grad: bool,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push(value, op, requires_grad))
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf; [`Graph::backward`] reports its gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- elementwise -------------------------------------------------

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let av = self.value(a);
        let bv = self.value(b);
        let ad = av.dims4();
        let bd = bv.dims4();
        if !broadcastable(&ad, &bd) {
            return Err(Error::shape(name, av.shape(), bv.shape()));
        }
        if let Binary::Div = kind {
            if bv.data().iter().any(|v| *v == T::zero()) {
                return Err(Error::Domain {
                    op: "div",
                    detail: "division by zero".into(),
                });
            }
        }
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let mut out = av.data().to_vec();
        if ad == bd {
            for (o, &y) in out.iter_mut().zip(bv.data()) {
                *o = f(*o, y);
            }
        } else {
            let bdata = bv.data();
            for_each_bcast(&ad, &bd, |ia, ib| out[ia] = f(out[ia], bdata[ib]));
        }
        let value = Tensor::new(av.shape(), out)?;
        let rg = self.rg(&[a, b]);
        self.push_checked(name, value, Op::Binary(kind, a, b), rg)
    }

    /// `a + b`; `b` may broadcast over size-1 dims of `a` (e.g. a per-channel bias).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::from_f64(c);
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push_checked("scale", value, Op::Scale(a, c), rg)
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::from_f64(c);
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push_checked("offset", value, Op::Offset(a), rg)
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let av = self.value(a);
        let value = match kind {
            Unary::LeakyRelu(slope) => {
                let s = T::from_f64(slope);
                av.map(|x| if x > T::zero() { x } else { x * s })
            }
            Unary::Sigmoid => av.map(sigmoid),
            Unary::Tanh => av.map(|x| x.tanh()),
            Unary::Log => {
                if av.data().iter().any(|&x| x <= T::zero()) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: "log of non-positive value".into(),
                    });
                }
                av.map(|x| x.ln())
            }
            Unary::Abs => av.map(|x| x.abs()),
            Unary::Softplus => av.map(softplus),
            Unary::Sqrt => {
                if av.data().iter().any(|&x| x < T::zero()) {
                    return Err(Error::Domain {
                        op: "sqrt",
                        detail: "sqrt of negative value".into(),
                    });
                }
                av.map(|x| x.sqrt())
            }
            Unary::Clamp(lo, hi) => {
                let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
                av.map(|x| x.max(lo).min(hi))
            }
        };
        let rg = self.rg(&[a]);
        self.push_checked("unary", value, Op::Unary(kind, a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(Unary::LeakyRelu(slope), a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Abs, a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Softplus, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, a)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(Unary::Clamp(lo, hi), a)
    }

    /// Apply a per-sample [`WarpMap`] to every channel of an NCHW tensor.
    pub fn warp(&mut self, x: Var, map: &Arc<WarpMap>) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4();
        if n != map.batch() || (h, w) != map.in_hw() {
            return Err(Error::geometry(
                "warp",
                format!("map expects batch {} of {:?}, got {n} of {:?}", map.batch(), map.in_hw(), (h, w)),
            ));
        }
        let (ho, wo) = map.out_hw();
        let value = Tensor::new(&[n, c, ho, wo], map.forward(self.value(x).data(), c))?;
        let rg = self.rg(&[x]);
        self.push_checked("warp", value, Op::Warp { x, map: map.clone() }, rg)
    }

    // ---- convolution -------------------------------------------------

    /// Cross-correlation of an NCHW input with an `O x C/groups x k x k`
    /// weight, plus an optional per-output-channel bias.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let dims = ConvDims::for_conv(self.shape(x), self.shape(w), geom)?;
        let out = conv::forward(self.value(x).data(), self.value(w).data(), &dims);
        let value = Tensor::new(&dims.output_shape(), out)?;
        let rg = self.rg(&[x, w]);
        let y = self.push_checked("conv2d", value, Op::Conv { x, w, dims }, rg)?;
        match bias {
            Some(b) => self.add_channel_bias(y, b),
            None => Ok(y),
        }
    }

    /// Exact adjoint of [`Graph::conv2d`] for the same weight and geometry.
    /// The weight is `C_in x C_out/groups x k x k`.
    pub fn transposed_conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Result<Var> {
        let dims = ConvDims::for_transposed(self.shape(x), self.shape(w), geom)?;
        let out = conv::adjoint(self.value(x).data(), self.value(w).data(), &dims);
        let value = Tensor::new(&dims.input_shape(), out)?;
        let rg = self.rg(&[x, w]);
        self.push_checked("transposed_conv2d", value, Op::ConvTransposed { x, w, dims }, rg)
    }

    fn add_channel_bias(&mut self, y: Var, b: Var) -> Result<Var> {
        let c = self.shape(y)[1];
        if self.value(b).len() != c {
            return Err(Error::shape("bias", self.shape(y), self.shape(b)));
        }
        let b4 = if self.shape(b).len() == 4 {
            b
        } else {
            self.reshape(b, &[1, c, 1, 1])?
        };
        self.add(y, b4)
    }

    // ---- reductions --------------------------------------------------

    /// Reduce over `axes` (indices into the tensor's own shape), keeping
    /// reduced dims as size 1. `None` reduces everything to a scalar.
    pub fn reduce(&mut self, a: Var, kind: ReduceKind, axes: Option<&[usize]>) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(Error::Empty { op: "reduce" });
        }
        let rank = av.shape().len();
        let off = 4 - rank;
        let mut mask = [false; 4];
        match axes {
            None => mask = [true; 4],
            Some(list) => {
                for &ax in list {
                    if ax >= rank {
                        return Err(Error::geometry("reduce", format!("axis {ax} >= rank {rank}")));
                    }
                    mask[off + ax] = true;
                }
            }
        }
        let ad = av.dims4();
        let mut od = ad;
        for i in 0..4 {
            if mask[i] {
                od[i] = 1;
            }
        }
        let count: usize = (0..4).filter(|&i| mask[i]).map(|i| ad[i]).product();
        let mut out = vec![T::zero(); od.iter().product()];
        let data = av.data();
        for_each_bcast(&ad, &od, |ia, io| {
            let x = data[ia];
            out[io] += match kind {
                ReduceKind::Sum | ReduceKind::Mean => x,
                ReduceKind::L1 => x.abs(),
                ReduceKind::L2Sq => x * x,
            };
        });
        if kind == ReduceKind::Mean {
            let inv = T::one() / T::from_f64(count as f64);
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let shape: Vec<usize> = if axes.is_none() {
            vec![]
        } else {
            od[off..].to_vec()
        };
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(&[a]);
        self.push_checked("reduce", value, Op::Reduce { x: a, kind, mask }, rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, ReduceKind::Sum, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(a, ReduceKind::Mean, None)
    }

    // ---- normalization and resampling --------------------------------

    /// Per-sample, per-channel standardization over H x W, no affine.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = match *xv.shape() {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(Error::geometry("instance_norm", "expected NCHW input")),
        };
        let m = h * w;
        if m < 2 {
            return Err(Error::geometry(
                "instance_norm",
                format!("spatial size {h}x{w} is degenerate"),
            ));
        }
        let eps = T::from_f64(eps);
        let inv_m = T::one() / T::from_f64(m as f64);
        let mut out = xv.data().to_vec();
        let mut inv_std = Vec::with_capacity(n * c);
        for plane in out.chunks_mut(m) {
            let mean = plane.iter().copied().sum::<T>() * inv_m;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_m;
            let is = T::one() / (var + eps).sqrt();
            for v in plane.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let value = Tensor::new(xv.shape(), out)?;
        let rg = self.rg(&[x]);
        self.push_checked("instance_norm", value, Op::InstanceNorm { x, inv_std }, rg)
    }

    /// 2x2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = nchw("avg_pool2", xv.shape())?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::geometry("avg_pool2", format!("odd extent {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let quarter = T::from_f64(0.25);
        let d = xv.data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for (p, plane) in out.chunks_mut(ho * wo).enumerate() {
            let src = &d[p * h * w..][..h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let i = 2 * oy * w + 2 * ox;
                    plane[oy * wo + ox] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
                }
            }
        }
        let value = Tensor::new(&[n, c, ho, wo], out)?;
        let rg = self.rg(&[x]);
        self.push_checked("avg_pool2", value, Op::AvgPool2(x), rg)
    }

    /// Nearest-neighbour upsampling by 2.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = nchw("upsample2", xv.shape())?;
        let (ho, wo) = (2 * h, 2 * w);
        let d = xv.data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for (p, plane) in out.chunks_mut(ho * wo).enumerate() {
            let src = &d[p * h * w..][..h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    plane[oy * wo + ox] = src[(oy / 2) * w + ox / 2];
                }
            }
        }
        let value = Tensor::new(&[n, c, ho, wo], out)?;
        let rg = self.rg(&[x]);
        self.push_checked("upsample2", value, Op::Upsample2(x), rg)
    }

    // ---- structural --------------------------------------------------

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty { op: "concat" })?;
        let [n, _, h, w] = nchw("concat", self.shape(first))?;
        let mut total_c = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = nchw("concat", self.shape(p))?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape("concat", self.shape(first), self.shape(p)));
            }
            total_c += pc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total_c * hw);
        for s in 0..n {
            for &p in parts {
                let pv = self.value(p);
                let pc = pv.shape()[1];
                out.extend_from_slice(&pv.data()[s * pc * hw..(s + 1) * pc * hw]);
            }
        }
        let value = Tensor::new(&[n, total_c, h, w], out)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = nchw("slice_channels", xv.shape())?;
        if start + len > c || len == 0 {
            return Err(Error::geometry(
                "slice_channels",
                format!("range {start}..{} outside {c} channels", start + len),
            ));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * len * hw);
        for s in 0..n {
            out.extend_from_slice(&xv.data()[(s * c + start) * hw..(s * c + start + len) * hw]);
        }
        let value = Tensor::new(&[n, len, h, w], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SliceChannels { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// `w / σ` with `σ = uᵀ W v`, where `W` is `w` flattened to
    /// `out x rest`. `u` and `v` come from power iteration and are treated
    /// as constants.
    pub fn spectral_norm(&mut self, w: Var, u: &[T], v: &[T]) -> Result<Var> {
        let wv = self.value(w);
        let rows = *wv.shape().first().ok_or(Error::Empty { op: "spectral_norm" })?;
        let cols = wv.len() / rows.max(1);
        if u.len() != rows || v.len() != cols {
            return Err(Error::geometry(
                "spectral_norm",
                format!("vectors {}x{} do not match weight {rows}x{cols}", u.len(), v.len()),
            ));
        }
        let d = wv.data();
        let mut sigma = T::zero();
        for (i, ui) in u.iter().enumerate() {
            let row = &d[i * cols..(i + 1) * cols];
            sigma += *ui * row.iter().zip(v).map(|(a, b)| *a * *b).sum::<T>();
        }
        if sigma.abs() <= T::epsilon() {
            return Err(Error::Domain {
                op: "spectral_norm",
                detail: "estimated spectral norm is zero".into(),
            });
        }
        let value = wv.map(|x| x / sigma);
        let rg = self.rg(&[w]);
        self.push_checked(
            "spectral_norm",
            value,
            Op::SpectralNorm {
                w,
                u: u.to_vec(),
                v: v.to_vec(),
                sigma,
            },
            rg,
        )
    }

    // ---- backward ----------------------------------------------------

    /// One reverse sweep from a scalar `loss`. Gradients of leaves that feed
    /// the loss along several paths accumulate additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(Error::Backward(format!(
                "loss has shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Backward("loss is detached from every trainable leaf".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(node.value.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, g, &mut grads)?;
        }
        // Only trainable leaves keep their gradients.
        for (i, slot) in grads.iter_mut().enumerate() {
            if slot.is_some() && !matches!(self.nodes[i].op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let ad = av.dims4();
                let bd = bv.dims4();
                let need_a = self.nodes[a.0].requires_grad;
                let need_b = self.nodes[b.0].requires_grad;
                let same = ad == bd;
                let bdata = bv.data();
                let adata = av.data();
                let gd = g.data();
                if need_a {
                    let ga = match kind {
                        Binary::Add | Binary::Sub => g.clone(),
                        Binary::Mul | Binary::Div => {
                            let mut out = gd.to_vec();
                            if same {
                                for (o, &y) in out.iter_mut().zip(bdata) {
                                    *o = if let Binary::Mul = kind { *o * y } else { *o / y };
                                }
                            } else {
                                for_each_bcast(&ad, &bd, |ia, ib| {
                                    out[ia] = if let Binary::Mul = kind {
                                        out[ia] * bdata[ib]
                                    } else {
                                        out[ia] / bdata[ib]
                                    };
                                });
                            }
                            Tensor::new(av.shape(), out)?
                        }
                    };
                    self.accumulate(grads, *a, ga);
                }
                if need_b {
                    let mut gb = vec![T::zero(); bv.len()];
                    let term = |ia: usize, ib: usize| -> T {
                        match kind {
                            Binary::Add => gd[ia],
                            Binary::Sub => -gd[ia],
                            Binary::Mul => gd[ia] * adata[ia],
                            Binary::Div => -gd[ia] * adata[ia] / (bdata[ib] * bdata[ib]),
                        }
                    };
                    if same {
                        for (i, o) in gb.iter_mut().enumerate() {
                            *o = term(i, i);
                        }
                    } else {
                        for_each_bcast(&ad, &bd, |ia, ib| gb[ib] += term(ia, ib));
                    }
                    self.accumulate(grads, *b, Tensor::new(bv.shape(), gb)?);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::Offset(a) => self.accumulate(grads, *a, g),
            Op::Unary(kind, a) => {
                let x = self.nodes[a.0].value.data();
                let y = node.value.data();
                let mut out = g.into_data();
                match *kind {
                    Unary::LeakyRelu(slope) => {
                        let s = T::from_f64(slope);
                        for (o, &xi) in out.iter_mut().zip(x) {
                            if xi <= T::zero() {
                                *o *= s;
                            }
                        }
                    }
                    Unary::Sigmoid => {
                        for (o, &yi) in out.iter_mut().zip(y) {
                            *o *= yi * (T::one() - yi);
                        }
                    }
                    Unary::Tanh => {
                        for (o, &yi) in out.iter_mut().zip(y) {
                            *o *= T::one() - yi * yi;
                        }
                    }
                    Unary::Log => {
                        for (o, &xi) in out.iter_mut().zip(x) {
                            *o /= xi;
                        }
                    }
                    Unary::Abs => {
                        for (o, &xi) in out.iter_mut().zip(x) {
                            *o *= sign(xi);
                        }
                    }
                    Unary::Softplus => {
                        for (o, &xi) in out.iter_mut().zip(x) {
                            *o *= sigmoid(xi);
                        }
                    }
                    Unary::Sqrt => {
                        let half = T::from_f64(0.5);
                        for (o, &yi) in out.iter_mut().zip(y) {
                            *o = if yi > T::zero() { *o * half / yi } else { T::zero() };
                        }
                    }
                    Unary::Clamp(lo, hi) => {
                        let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
                        for (o, &xi) in out.iter_mut().zip(x) {
                            if xi <= lo || xi >= hi {
                                *o = T::zero();
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(node.value.shape(), out)?);
            }
            Op::Warp { x, map } => {
                let xv = &self.nodes[x.0].value;
                let c = xv.dims4()[1];
                let gx = map.adjoint(g.data(), c);
                self.accumulate(grads, *x, Tensor::new(xv.shape(), gx)?);
            }
            Op::Conv { x, w, dims } => {
                if self.nodes[x.0].requires_grad {
                    let gx = conv::adjoint(g.data(), self.nodes[w.0].value.data(), dims);
                    self.accumulate(grads, *x, Tensor::new(&dims.input_shape(), gx)?);
                }
                if self.nodes[w.0].requires_grad {
                    let gw = conv::weight_grad(self.nodes[x.0].value.data(), g.data(), dims);
                    self.accumulate(grads, *w, Tensor::new(self.nodes[w.0].value.shape(), gw)?);
                }
            }
            Op::ConvTransposed { x, w, dims } => {
                if self.nodes[x.0].requires_grad {
                    let gx = conv::forward(g.data(), self.nodes[w.0].value.data(), dims);
                    self.accumulate(grads, *x, Tensor::new(&dims.output_shape(), gx)?);
                }
                if self.nodes[w.0].requires_grad {
                    let gw = conv::weight_grad(g.data(), self.nodes[x.0].value.data(), dims);
                    self.accumulate(grads, *w, Tensor::new(self.nodes[w.0].value.shape(), gw)?);
                }
            }
            Op::Reduce { x, kind, mask } => {
                let xv = &self.nodes[x.0].value;
                let xd = xv.dims4();
                let mut od = xd;
                for i in 0..4 {
                    if mask[i] {
                        od[i] = 1;
                    }
                }
                let count: usize = (0..4).filter(|&i| mask[i]).map(|i| xd[i]).product();
                let inv = T::one() / T::from_f64(count as f64);
                let two = T::from_f64(2.0);
                let gd = g.data();
                let xs = xv.data();
                let mut out = vec![T::zero(); xv.len()];
                for_each_bcast(&xd, &od, |ix, io| {
                    out[ix] = match kind {
                        ReduceKind::Sum => gd[io],
                        ReduceKind::Mean => gd[io] * inv,
                        ReduceKind::L1 => gd[io] * sign(xs[ix]),
                        ReduceKind::L2Sq => gd[io] * two * xs[ix],
                    };
                });
                self.accumulate(grads, *x, Tensor::new(xv.shape(), out)?);
            }
            Op::InstanceNorm { x, inv_std } => {
                let shape = node.value.shape();
                let m = shape[2] * shape[3];
                let inv_m = T::one() / T::from_f64(m as f64);
                let xhat = node.value.data();
                let mut out = g.into_data();
                for (p, plane) in out.chunks_mut(m).enumerate() {
                    let xh = &xhat[p * m..(p + 1) * m];
                    let mean_g = plane.iter().copied().sum::<T>() * inv_m;
                    let mean_gx = plane.iter().zip(xh).map(|(a, b)| *a * *b).sum::<T>() * inv_m;
                    let is = inv_std[p];
                    for (gi, &xi) in plane.iter_mut().zip(xh) {
                        *gi = is * (*gi - mean_g - xi * mean_gx);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(shape, out)?);
            }
            Op::AvgPool2(x) => {
                let xv = &self.nodes[x.0].value;
                let [_, _, h, w] = xv.dims4();
                let (ho, wo) = (h / 2, w / 2);
                let quarter = T::from_f64(0.25);
                let mut out = vec![T::zero(); xv.len()];
                for (p, src) in g.data().chunks(ho * wo).enumerate() {
                    let plane = &mut out[p * h * w..][..h * w];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let v = src[oy * wo + ox] * quarter;
                            let i = 2 * oy * w + 2 * ox;
                            plane[i] = v;
                            plane[i + 1] = v;
                            plane[i + w] = v;
                            plane[i + w + 1] = v;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape(), out)?);
            }
            Op::Upsample2(x) => {
                let xv = &self.nodes[x.0].value;
                let [_, _, h, w] = xv.dims4();
                let wo = 2 * w;
                let mut out = vec![T::zero(); xv.len()];
                for (p, src) in g.data().chunks(4 * h * w).enumerate() {
                    let plane = &mut out[p * h * w..][..h * w];
                    for y in 0..h {
                        for x in 0..w {
                            let i = 2 * y * wo + 2 * x;
                            plane[y * w + x] = src[i] + src[i + 1] + src[i + wo] + src[i + wo + 1];
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape(), out)?);
            }
            Op::Concat(parts) => {
                let [n, c, h, w] = node.value.dims4();
                let hw = h * w;
                let gd = g.data();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.nodes[p.0].value.shape()[1];
                    if self.nodes[p.0].requires_grad {
                        let mut out = Vec::with_capacity(n * pc * hw);
                        for s in 0..n {
                            out.extend_from_slice(&gd[(s * c + offset) * hw..(s * c + offset + pc) * hw]);
                        }
                        self.accumulate(grads, p, Tensor::new(&[n, pc, h, w], out)?);
                    }
                    offset += pc;
                }
            }
            Op::SliceChannels { x, start } => {
                let xv = &self.nodes[x.0].value;
                let [n, c, h, w] = xv.dims4();
                let len = node.value.shape()[1];
                let hw = h * w;
                let mut out = vec![T::zero(); xv.len()];
                for s in 0..n {
                    out[(s * c + start) * hw..(s * c + start + len) * hw]
                        .copy_from_slice(&g.data()[s * len * hw..(s + 1) * len * hw]);
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape(), out)?);
            }
            Op::Reshape(x) => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                self.accumulate(grads, *x, g.reshape(&shape)?);
            }
            Op::SpectralNorm { w, u, v, sigma } => {
                let wv = &self.nodes[w.0].value;
                let cols = v.len();
                let inner: T = g
                    .data()
                    .iter()
                    .zip(wv.data())
                    .map(|(a, b)| *a * *b)
                    .sum();
                let coef = inner / (*sigma * *sigma);
                let mut out = g.into_data();
                for (i, row) in out.chunks_mut(cols).enumerate() {
                    for (j, o) in row.iter_mut().enumerate() {
                        *o = *o / *sigma - coef * u[i] * v[j];
                    }
                }
                self.accumulate(grads, *w, Tensor::new(wv.shape(), out)?);
            }
        }
        Ok(())
    }
}

fn nchw(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::geometry(op, format!("expected NCHW tensor, got {shape:?}"))),
    }
}

fn broadcastable(a: &[usize; 4], b: &[usize; 4]) -> bool {
    a.iter().zip(b).all(|(x, y)| x == y || *y == 1)
}

/// Visit every flat index of a tensor with dims `a` together with the flat
/// index of the broadcast operand with dims `b` (each dim equal or 1).
#[inline]
fn for_each_bcast(a: &[usize; 4], b: &[usize; 4], mut f: impl FnMut(usize, usize)) {
    let bs = [
        if b[0] == 1 { 0 } else { b[1] * b[2] * b[3] },
        if b[1] == 1 { 0 } else { b[2] * b[3] },
        if b[2] == 1 { 0 } else { b[3] },
        if b[3] == 1 { 0 } else { 1 },
    ];
    let mut ia = 0;
    for i0 in 0..a[0] {
        for i1 in 0..a[1] {
            let base = i0 * bs[0] + i1 * bs[1];
            for i2 in 0..a[2] {
                let row = base + i2 * bs[2];
                for i3 in 0..a[3] {
                    f(ia, row + i3 * bs[3]);
                    ia += 1;
                }
            }
        }
    }
}

fn sign<T: Float>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub(crate) fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Float>(x: T) -> T {
    // max(x, 0) + ln(1 + e^{-|x|})
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[v.len()], v).unwrap()
    }

    #[test]
    fn add_and_activation_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(vec_t(&[1.0, 2.0]));
        let b = g.constant(vec_t(&[3.0, 4.0]));
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).data(), &[4.0, 6.0]);

        let x = g.constant(vec_t(&[-1.0, 2.0]));
        let l = g.leaky_relu(x, 0.2).unwrap();
        assert_eq!(g.value(l).data(), &[-0.2, 2.0]);

        let z = g.constant(vec_t(&[0.0]));
        let s = g.sigmoid(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.5]);
    }

    #[test]
    fn binary_rejects_mismatched_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.add(a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::from_f64(&[2], &[1.0, 0.0]).unwrap());
        assert!(matches!(g.log(a), Err(Error::Domain { .. })));
    }

    #[test]
    fn reductions() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(vec_t(&[1.0, -2.0, 3.0]));
        let b = g.constant(vec_t(&[1.0, -2.0, 3.0]));
        let d = g.sub(a, b).unwrap();
        let l1 = g.reduce(d, ReduceKind::L1, None).unwrap();
        assert_eq!(g.value(l1).item(), 0.0);

        let m = g.constant(vec_t(&[2.0, 4.0]));
        let mean = g.mean(m).unwrap();
        assert_eq!(g.value(mean).item(), 3.0);

        let v = g.constant(vec_t(&[3.0, 4.0]));
        let sq = g.reduce(v, ReduceKind::L2Sq, None).unwrap();
        assert_eq!(g.value(sq).item(), 25.0);

        let e = g.constant(Tensor::zeros(&[0]));
        assert!(matches!(g.mean(e), Err(Error::Empty { .. })));
    }

    #[test]
    fn reduce_over_axes_keeps_dims() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let r = g.reduce(a, ReduceKind::Sum, Some(&[1])).unwrap();
        assert_eq!(g.shape(r), &[2, 1]);
        assert_eq!(g.value(r).data(), &[6.0, 15.0]);
        let c = g.reduce(a, ReduceKind::Mean, Some(&[0])).unwrap();
        assert_eq!(g.value(c).data(), &[2.5, 3.5, 4.5]);
    }

    #[test]
    fn linear_gradient_is_input() {
        let mut g = Graph::<f64>::new();
        let w = g.param(vec_t(&[0.5, -1.0, 2.0]));
        let x = g.constant(vec_t(&[3.0, 4.0, -5.0]));
        let p = g.mul(w, x).unwrap();
        let loss = g.sum(p).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[3.0, 4.0, -5.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn l2_gradient_is_twice_input() {
        let mut g = Graph::<f64>::new();
        let w = g.param(vec_t(&[3.0, 4.0]));
        let loss = g.reduce(w, ReduceKind::L2Sq, None).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[6.0, 8.0]);
    }

    #[test]
    fn gradients_accumulate_over_paths() {
        let mut g = Graph::<f64>::new();
        let w = g.param(vec_t(&[2.0]));
        let a = g.scale(w, 3.0).unwrap();
        let b = g.mul(w, w).unwrap();
        let s = g.add(a, b).unwrap();
        let loss = g.sum(s).unwrap();
        let grads = g.backward(loss).unwrap();
        // d/dw (3w + w²) = 3 + 2w = 7
        assert_eq!(grads.get(w).unwrap().data(), &[7.0]);
    }

    #[test]
    fn backward_rejects_bad_losses() {
        let mut g = Graph::<f64>::new();
        let w = g.param(vec_t(&[1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(Error::Backward(_))));
        let c = g.constant(vec_t(&[1.0]));
        let s = g.sum(c).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Backward(_))));
    }

    #[test]
    fn per_channel_broadcast() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.param(Tensor::from_f64(&[1, 2, 1, 1], &[10.0, 20.0]).unwrap());
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[11.0, 12.0, 23.0, 24.0]);
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn stable_softplus_and_sigmoid() {
        assert!((softplus(1000.0f64) - 1000.0).abs() < 1e-9);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((sigmoid(-1000.0f64)).abs() < 1e-300);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }
}
