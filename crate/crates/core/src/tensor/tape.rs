use std::sync::Arc;

use crate::error::{Error, Result};
use crate::real::Real;

use super::kernels::{self, ConvGeom, GroupMoments, NormGroups};
use super::{Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Upsample(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Affine {
        x: Var,
        scale: Var,
        shift: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Reshape(Var),
    Normalize {
        x: Var,
        groups: NormGroups,
        inv_std: Vec<f64>,
    },
    GuidedSample {
        bank: Var,
        labels: Arc<[u32]>,
    },
    Concat(Var, Var),
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of one forward pass.
///
/// Nodes are appended in execution order, so inputs always precede the node
/// that consumes them and [`backward`](Tape::backward) is a single reverse
/// sweep.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a} vs {b}")));
    }
    Ok(())
}

/// Whether `b` broadcasts onto `a` (every dim equal or 1).
fn broadcasts(a: Shape, b: Shape) -> bool {
    a.dims()
        .iter()
        .zip(b.dims())
        .all(|(&x, y)| y == x || y == 1)
}

/// Strides into a broadcast operand, zero along broadcast dims.
fn bcast_strides(full: Shape, b: Shape) -> [usize; 4] {
    let sw = usize::from(b.w == full.w && full.w > 1);
    let sh = if b.h == full.h && full.h > 1 { b.w } else { 0 };
    let sc = if b.c == full.c && full.c > 1 { b.h * b.w } else { 0 };
    let sn = if b.n == full.n && full.n > 1 { b.c * b.h * b.w } else { 0 };
    [sn, sc, sh, sw]
}

fn for_each_bcast(full: Shape, a: [usize; 4], b: [usize; 4], mut f: impl FnMut(usize, usize, usize)) {
    let mut i = 0;
    for n in 0..full.n {
        for c in 0..full.c {
            for h in 0..full.h {
                let (ba, bb) = (n * a[0] + c * a[1] + h * a[2], n * b[0] + c * b[1] + h * b[2]);
                for w in 0..full.w {
                    f(i, ba + w * a[3], bb + w * b[3]);
                    i += 1;
                }
            }
        }
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("zip_map shape")
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape on which parameters are recorded as constants; nothing is
    /// differentiable.
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let rg = self.grad_enabled;
        self.push(value, Op::Leaf, rg)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    /// 2-D convolution with zero padding. `w` is `C_out×C_in×k×k`, `b` is
    /// `1×C_out×1×1`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.c != ws.c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels but weight expects C_in={}", xs.c, ws.c),
            ));
        }
        let geom = ConvGeom::new(xs, ws, stride, pad).ok_or_else(|| {
            Error::shape(
                "conv2d",
                format!("kernel {ws} stride {stride} pad {pad} does not fit input {xs}"),
            )
        })?;
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs.numel() != ws.n {
                return Err(Error::shape("conv2d", format!("bias {bs} for C_out={}", ws.n)));
            }
        }
        let value = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn upsample_nearest2x(&mut self, x: Var) -> Var {
        let value = kernels::upsample2x_forward(self.value(x));
        let rg = self.rg(&[x]);
        self.push(value, Op::Upsample(x), rg)
    }

    /// Subgradient at zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::ZERO { v } else { T::ZERO })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        self.unary(x, Op::LeakyRelu(x, slope), |v| if v > T::ZERO { v } else { v * s })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), |v| v.abs())
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let st = T::from_f64(s);
        self.unary(x, Op::Scale(x, s), |v| v * st)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let st = T::from_f64(s);
        self.unary(x, Op::AddScalar(x), |v| v + st)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.shape(a), self.shape(b))?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `x * scale + shift`; `scale` and `shift` broadcast onto `x` along any
    /// dimension of size one (per-channel `1×C×1×1` or full `N×C×H×W`).
    pub fn affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (xs, ss, bs) = (self.shape(x), self.shape(scale), self.shape(shift));
        for (name, s) in [("scale", ss), ("shift", bs)] {
            if !broadcasts(xs, s) {
                return Err(Error::shape("affine", format!("{name} {s} does not broadcast to {xs}")));
            }
        }
        let (sa, sb) = (bcast_strides(xs, ss), bcast_strides(xs, bs));
        let mut out = Tensor::zeros(xs);
        {
            let (xd, sd, bd) = (self.value(x).data(), self.value(scale).data(), self.value(shift).data());
            let od = out.data_mut();
            for_each_bcast(xs, sa, sb, |i, si, bi| od[i] = xd[i] * sd[si] + bd[bi]);
        }
        let rg = self.rg(&[x, scale, shift]);
        Ok(self.push(out, Op::Affine { x, scale, shift }, rg))
    }

    /// Dense layer on the flattened batch items: `x` is `N×D` (any `N×C×H×W`
    /// with `C·H·W = D`), `w` is `D_out×D`, output is `N×D_out×1×1`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let (n, d) = (xs.n, xs.item());
        let d_out = ws.n;
        if ws.item() != d {
            return Err(Error::shape("linear", format!("input dim {d} vs weight {ws}")));
        }
        if let Some(b) = b {
            if self.shape(b).numel() != d_out {
                return Err(Error::shape("linear", format!("bias {} for D_out={d_out}", self.shape(b))));
            }
        }
        let mut out = Tensor::zeros(Shape::matrix(n, d_out));
        // SAFETY: out is n×d_out, x is n×d, w^T is d×d_out.
        unsafe {
            T::gemm(
                n,
                d,
                d_out,
                T::ONE,
                self.value(x).data().as_ptr(),
                d as isize,
                1,
                self.value(w).data().as_ptr(),
                1,
                d as isize,
                T::ZERO,
                out.data_mut().as_mut_ptr(),
                d_out as isize,
                1,
            );
        }
        if let Some(b) = b {
            let bd = self.value(b).data().to_vec();
            for row in out.data_mut().chunks_mut(d_out) {
                row.iter_mut().zip(&bd).for_each(|(o, &v)| *o += v);
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Zero-mean, unit-variance normalization per group; no affine.
    pub fn normalize(&mut self, x: Var, groups: NormGroups, eps: f64) -> (Var, GroupMoments) {
        let (value, moments, inv_std) = kernels::normalize_forward(self.value(x), groups, eps);
        let rg = self.rg(&[x]);
        let v = self.push(value, Op::Normalize { x, groups, inv_std }, rg);
        (v, moments)
    }

    /// Per-pixel lookup of `bank` (`N_c×C×1×1`) by class label. `labels` is
    /// `n×h×w`, row-major.
    pub fn guided_sample(&mut self, bank: Var, labels: Arc<[u32]>, n: usize, h: usize, w: usize) -> Result<Var> {
        let bs = self.shape(bank);
        if bs.h != 1 || bs.w != 1 {
            return Err(Error::shape("guided_sample", format!("bank must be N_c×C×1×1, got {bs}")));
        }
        if labels.len() != n * h * w {
            return Err(Error::shape(
                "guided_sample",
                format!("{} labels for {n}x{h}x{w}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= bs.n) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes: bs.n,
            });
        }
        let value = kernels::guided_sample_forward(self.value(bank), &labels, Shape::new(n, bs.c, h, w));
        let rg = self.rg(&[bank]);
        Ok(self.push(value, Op::GuidedSample { bank, labels }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(Error::shape("concat_channels", format!("{sa} vs {sb}")));
        }
        let shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let mut data = Vec::with_capacity(shape.numel());
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for n in 0..sa.n {
            data.extend_from_slice(&da[n * sa.item()..(n + 1) * sa.item()]);
            data.extend_from_slice(&db[n * sb.item()..(n + 1) * sb.item()]);
        }
        let value = Tensor::from_vec(shape, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_f64();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.sum_f64() / t.len().max(1) as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Mean(x), rg)
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// where a value feeds several consumers.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if !ls.is_scalar() {
            return Err(Error::NonScalarLoss(ls.to_string()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::ONE));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            self.backward_node(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backward_node(&self, node: &Node<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let need = (wants(*x), wants(*w), b.is_some_and(wants));
                let g = kernels::conv2d_backward(val(*x), val(*w), gy, geom, need);
                if let Some(gx) = g.x {
                    accumulate(grads, *x, gx);
                }
                if let Some(gw) = g.w {
                    accumulate(grads, *w, gw);
                }
                if let (Some(b), Some(gb)) = (b, g.b) {
                    let gb = gb.reshape(val(*b).shape()).expect("bias shape");
                    accumulate(grads, *b, gb);
                }
            }
            Op::Upsample(x) => {
                accumulate(grads, *x, kernels::upsample2x_backward(gy, val(*x).shape()));
            }
            Op::Relu(x) => {
                let g = zip_map(gy, val(*x), |g, v| if v > T::ZERO { g } else { T::ZERO });
                accumulate(grads, *x, g);
            }
            Op::LeakyRelu(x, slope) => {
                let s = T::from_f64(*slope);
                let g = zip_map(gy, val(*x), |g, v| if v > T::ZERO { g } else { g * s });
                accumulate(grads, *x, g);
            }
            Op::Tanh(x) => {
                let g = zip_map(gy, &node.value, |g, y| g * (T::ONE - y * y));
                accumulate(grads, *x, g);
            }
            Op::Abs(x) => {
                let g = zip_map(gy, val(*x), |g, v| {
                    if v > T::ZERO {
                        g
                    } else if v < T::ZERO {
                        -g
                    } else {
                        T::ZERO
                    }
                });
                accumulate(grads, *x, g);
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        accumulate(grads, v, gy.clone());
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, gy.clone());
                }
                if wants(*b) {
                    accumulate(grads, *b, gy.map(|g| -g));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, zip_map(gy, val(*b), |g, y| g * y));
                }
                if wants(*b) {
                    accumulate(grads, *b, zip_map(gy, val(*a), |g, x| g * x));
                }
            }
            Op::Scale(x, s) => {
                let s = T::from_f64(*s);
                accumulate(grads, *x, gy.map(|g| g * s));
            }
            Op::AddScalar(x) => accumulate(grads, *x, gy.clone()),
            Op::Affine { x, scale, shift } => {
                let xs = val(*x).shape();
                let (ss, bs) = (val(*scale).shape(), val(*shift).shape());
                let (sa, sb) = (bcast_strides(xs, ss), bcast_strides(xs, bs));
                let (gd, xd, sd) = (gy.data(), val(*x).data(), val(*scale).data());
                if wants(*x) {
                    let gx = if ss == xs {
                        zip_map(gy, val(*scale), |g, s| g * s)
                    } else {
                        let mut gx = Tensor::zeros(xs);
                        let o = gx.data_mut();
                        for_each_bcast(xs, sa, sa, |i, si, _| o[i] = gd[i] * sd[si]);
                        gx
                    };
                    accumulate(grads, *x, gx);
                }
                // full-shape operands need no reduction
                let full_scale = ss == xs && wants(*scale);
                let full_shift = bs == xs && wants(*shift);
                if full_scale {
                    accumulate(grads, *scale, zip_map(gy, val(*x), |g, x| g * x));
                }
                if full_shift {
                    accumulate(grads, *shift, gy.clone());
                }
                if (wants(*scale) && !full_scale) || (wants(*shift) && !full_shift) {
                    let mut gs = vec![0f64; ss.numel()];
                    let mut gb = vec![0f64; bs.numel()];
                    for_each_bcast(xs, sa, sb, |i, si, bi| {
                        let g = gd[i].to_f64();
                        gs[si] += g * xd[i].to_f64();
                        gb[bi] += g;
                    });
                    if wants(*scale) && !full_scale {
                        accumulate(grads, *scale, from_f64_vec(ss, gs));
                    }
                    if wants(*shift) && !full_shift {
                        accumulate(grads, *shift, from_f64_vec(bs, gb));
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (xs, ws) = (val(*x).shape(), val(*w).shape());
                let (n, d, d_out) = (xs.n, xs.item(), ws.n);
                if wants(*x) {
                    let mut gx = Tensor::zeros(xs);
                    // SAFETY: gx is n×d, gy is n×d_out, w is d_out×d.
                    unsafe {
                        T::gemm(
                            n,
                            d_out,
                            d,
                            T::ONE,
                            gy.data().as_ptr(),
                            d_out as isize,
                            1,
                            val(*w).data().as_ptr(),
                            d as isize,
                            1,
                            T::ZERO,
                            gx.data_mut().as_mut_ptr(),
                            d as isize,
                            1,
                        );
                    }
                    accumulate(grads, *x, gx);
                }
                if wants(*w) {
                    let mut gw = Tensor::zeros(ws);
                    // SAFETY: gw is d_out×d, gy^T is d_out×n, x is n×d.
                    unsafe {
                        T::gemm(
                            d_out,
                            n,
                            d,
                            T::ONE,
                            gy.data().as_ptr(),
                            1,
                            d_out as isize,
                            val(*x).data().as_ptr(),
                            d as isize,
                            1,
                            T::ZERO,
                            gw.data_mut().as_mut_ptr(),
                            d as isize,
                            1,
                        );
                    }
                    accumulate(grads, *w, gw);
                }
                if let Some(b) = b.filter(|&b| wants(b)) {
                    let mut acc = vec![0f64; d_out];
                    for row in gy.data().chunks(d_out) {
                        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v.to_f64());
                    }
                    accumulate(grads, b, from_f64_vec(val(b).shape(), acc));
                }
            }
            Op::Reshape(x) => {
                let g = gy.clone().reshape(val(*x).shape()).expect("reshape grad");
                accumulate(grads, *x, g);
            }
            Op::Normalize { x, groups, inv_std } => {
                let g = kernels::normalize_backward(gy, &node.value, *groups, inv_std);
                accumulate(grads, *x, g);
            }
            Op::GuidedSample { bank, labels } => {
                let g = kernels::guided_sample_backward(gy, labels, val(*bank).shape());
                accumulate(grads, *bank, g);
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let gd = gy.data();
                let (ia, ib) = (sa.item(), sb.item());
                let mut ga = Vec::with_capacity(sa.numel());
                let mut gb = Vec::with_capacity(sb.numel());
                for n in 0..sa.n {
                    let base = n * (ia + ib);
                    ga.extend_from_slice(&gd[base..base + ia]);
                    gb.extend_from_slice(&gd[base + ia..base + ia + ib]);
                }
                if wants(*a) {
                    accumulate(grads, *a, Tensor::from_vec(sa, ga).expect("concat grad"));
                }
                if wants(*b) {
                    accumulate(grads, *b, Tensor::from_vec(sb, gb).expect("concat grad"));
                }
            }
            Op::Sum(x) => {
                let g = gy.data()[0];
                accumulate(grads, *x, Tensor::full(val(*x).shape(), g));
            }
            Op::Mean(x) => {
                let s = val(*x).shape();
                let g = T::from_f64(gy.data()[0].to_f64() / s.numel().max(1) as f64);
                accumulate(grads, *x, Tensor::full(s, g));
            }
        }
    }
}

fn from_f64_vec<T: Real>(shape: Shape, v: Vec<f64>) -> Tensor<T> {
    Tensor::from_vec(shape, v.into_iter().map(T::from_f64).collect()).expect("gradient shape")
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.index()] {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Shape>,
}

impl<T: Real> Gradients<T> {
    /// Gradient if the loss reached `v`.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.index()).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zero when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.index()]))
    }
}
