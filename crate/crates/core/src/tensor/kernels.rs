//! Raw forward/backward kernels behind the tape ops.

use crate::par;
use crate::real::Real;

use super::{Shape, Tensor};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: Shape, w: Shape, stride: usize, pad: usize) -> Option<ConvGeom> {
        let k = w.h;
        if w.w != k || stride == 0 || x.h + 2 * pad < k || x.w + 2 * pad < k {
            return None;
        }
        Some(ConvGeom {
            c_in: x.c,
            h: x.h,
            w: x.w,
            c_out: w.n,
            k,
            stride,
            pad,
            ho: (x.h + 2 * pad - k) / stride + 1,
            wo: (x.w + 2 * pad - k) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `[lo, hi)` of a row whose input column `ow·s + kj − pad`
/// is in range.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let s = g.stride;
    // ow·s + kj ≥ pad  and  ow·s + kj < w + pad
    let lo = g.pad.saturating_sub(kj).div_ceil(s);
    let hi = if g.w + g.pad > kj { (g.w + g.pad - kj).div_ceil(s) } else { 0 };
    (lo.min(g.wo), hi.min(g.wo).max(lo.min(g.wo)))
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (k, s) = (g.k, g.stride);
    let plane = g.out_plane();
    for ci in 0..g.c_in {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(g, kj);
                for oh in 0..g.ho {
                    let out = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    let ih = (oh * s + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        out.fill(T::ZERO);
                        continue;
                    }
                    let line = &src[ih as usize * g.w..(ih as usize + 1) * g.w];
                    out[..lo].fill(T::ZERO);
                    out[hi..].fill(T::ZERO);
                    if s == 1 {
                        let start = lo + kj - g.pad;
                        out[lo..hi].copy_from_slice(&line[start..start + hi - lo]);
                    } else {
                        for (ow, o) in out[lo..hi].iter_mut().enumerate() {
                            *o = line[(ow + lo) * s + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (k, s) = (g.k, g.stride);
    let plane = g.out_plane();
    for ci in 0..g.c_in {
        let dst = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(g, kj);
                for oh in 0..g.ho {
                    let ih = (oh * s + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let line = &mut dst[ih as usize * g.w..(ih as usize + 1) * g.w];
                    let from = &src[oh * g.wo + lo..oh * g.wo + hi];
                    if s == 1 {
                        let start = lo + kj - g.pad;
                        line[start..start + hi - lo].iter_mut().zip(from).for_each(|(d, &v)| *d += v);
                    } else {
                        for (ow, &v) in from.iter().enumerate() {
                            line[(ow + lo) * s + kj - g.pad] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Tensor<T> {
    let n = x.shape().n;
    let out_shape = Shape::new(n, g.c_out, g.ho, g.wo);
    let mut out = Tensor::zeros(out_shape);
    let in_item = x.shape().item();
    let out_item = out_shape.item();
    let (patch, plane) = (g.patch(), g.out_plane());
    let xd = x.data();
    let wd = w.data();
    par::for_each_chunk_mut(out.data_mut(), out_item, |i, dst| {
        let src = &xd[i * in_item..(i + 1) * in_item];
        let owned;
        let cols: &[T] = if g.is_pointwise() {
            src
        } else {
            let mut buf = vec![T::ZERO; patch * plane];
            im2col(src, g, &mut buf);
            owned = buf;
            &owned
        };
        // SAFETY: all three buffers are sized by the geometry above.
        unsafe {
            T::gemm(
                g.c_out,
                patch,
                plane,
                T::ONE,
                wd.as_ptr(),
                patch as isize,
                1,
                cols.as_ptr(),
                plane as isize,
                1,
                T::ZERO,
                dst.as_mut_ptr(),
                plane as isize,
                1,
            );
        }
        if let Some(b) = b {
            for (co, row) in dst.chunks_mut(plane).enumerate() {
                let bias = b.data()[co];
                row.iter_mut().for_each(|v| *v += bias);
            }
        }
    });
    out
}

pub(crate) struct ConvGrads<T> {
    pub x: Option<Tensor<T>>,
    pub w: Option<Tensor<T>>,
    pub b: Option<Tensor<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let n = x.shape().n;
    let in_item = x.shape().item();
    let (patch, plane) = (g.patch(), g.out_plane());
    let out_item = g.c_out * plane;
    let (xd, wd, gyd) = (x.data(), w.data(), gy.data());

    let gx = need.0.then(|| {
        let mut gx = Tensor::zeros(x.shape());
        par::for_each_chunk_mut(gx.data_mut(), in_item, |i, dst| {
            let gy_i = &gyd[i * out_item..(i + 1) * out_item];
            if g.is_pointwise() {
                // SAFETY: dst is c_in×plane, w is c_out×c_in, gy_i is c_out×plane.
                unsafe {
                    T::gemm(
                        g.c_in,
                        g.c_out,
                        plane,
                        T::ONE,
                        wd.as_ptr(),
                        1,
                        patch as isize,
                        gy_i.as_ptr(),
                        plane as isize,
                        1,
                        T::ZERO,
                        dst.as_mut_ptr(),
                        plane as isize,
                        1,
                    );
                }
                return;
            }
            let mut gcols = vec![T::ZERO; patch * plane];
            // SAFETY: gcols is patch×plane, w^T is patch×c_out.
            unsafe {
                T::gemm(
                    patch,
                    g.c_out,
                    plane,
                    T::ONE,
                    wd.as_ptr(),
                    1,
                    patch as isize,
                    gy_i.as_ptr(),
                    plane as isize,
                    1,
                    T::ZERO,
                    gcols.as_mut_ptr(),
                    plane as isize,
                    1,
                );
            }
            col2im_add(&gcols, g, dst);
        });
        gx
    });

    let gw = need.1.then(|| {
        let partials = par::map_range(n, |i| {
            let src = &xd[i * in_item..(i + 1) * in_item];
            let gy_i = &gyd[i * out_item..(i + 1) * out_item];
            let owned;
            let cols: &[T] = if g.is_pointwise() {
                src
            } else {
                let mut buf = vec![T::ZERO; patch * plane];
                im2col(src, g, &mut buf);
                owned = buf;
                &owned
            };
            let mut gw = vec![T::ZERO; g.c_out * patch];
            // SAFETY: gw is c_out×patch; cols^T is plane×patch.
            unsafe {
                T::gemm(
                    g.c_out,
                    plane,
                    patch,
                    T::ONE,
                    gy_i.as_ptr(),
                    plane as isize,
                    1,
                    cols.as_ptr(),
                    1,
                    plane as isize,
                    T::ZERO,
                    gw.as_mut_ptr(),
                    patch as isize,
                    1,
                );
            }
            gw
        });
        let mut total = Tensor::zeros(w.shape());
        for p in partials {
            total
                .data_mut()
                .iter_mut()
                .zip(p)
                .for_each(|(t, v)| *t += v);
        }
        total
    });

    let gb = need.2.then(|| {
        let mut acc = vec![0f64; g.c_out];
        for i in 0..n {
            for (co, a) in acc.iter_mut().enumerate() {
                let row = &gyd[i * out_item + co * plane..i * out_item + (co + 1) * plane];
                *a += row.iter().map(|v| v.to_f64()).sum::<f64>();
            }
        }
        Tensor::from_vec(
            Shape::new(1, g.c_out, 1, 1),
            acc.into_iter().map(T::from_f64).collect(),
        )
        .expect("bias gradient shape")
    });

    ConvGrads {
        x: gx,
        w: gw,
        b: gb,
    }
}

pub(crate) fn upsample2x_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let out_shape = Shape::new(s.n, s.c, 2 * s.h, 2 * s.w);
    let mut out = Tensor::zeros(out_shape);
    let xd = x.data();
    let (ow, plane) = (2 * s.w, s.plane());
    par::for_each_chunk_mut(out.data_mut(), out_shape.plane(), |p, dst| {
        let src = &xd[p * plane..(p + 1) * plane];
        for i in 0..s.h {
            for j in 0..s.w {
                let v = src[i * s.w + j];
                let top = 2 * i * ow + 2 * j;
                dst[top] = v;
                dst[top + 1] = v;
                dst[top + ow] = v;
                dst[top + ow + 1] = v;
            }
        }
    });
    out
}

pub(crate) fn upsample2x_backward<T: Real>(gy: &Tensor<T>, x_shape: Shape) -> Tensor<T> {
    let mut gx = Tensor::zeros(x_shape);
    let ow = 2 * x_shape.w;
    let gyd = gy.data();
    let out_plane = 4 * x_shape.plane();
    par::for_each_chunk_mut(gx.data_mut(), x_shape.plane(), |p, dst| {
        let src = &gyd[p * out_plane..(p + 1) * out_plane];
        for i in 0..x_shape.h {
            for j in 0..x_shape.w {
                let top = 2 * i * ow + 2 * j;
                dst[i * x_shape.w + j] = src[top] + src[top + 1] + src[top + ow] + src[top + ow + 1];
            }
        }
    });
    gx
}

/// Which elements share a mean and standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormGroups {
    /// One group per channel over `N×H×W` (batch normalization).
    PerChannel,
    /// One group per `(sample, channel)` over `H×W` (instance normalization).
    PerInstance,
}

impl NormGroups {
    pub(crate) fn count(self, s: Shape) -> usize {
        match self {
            NormGroups::PerChannel => s.c,
            NormGroups::PerInstance => s.n * s.c,
        }
    }

    /// Calls `f(group, plane_offset)` for every `H×W` plane.
    fn for_planes(self, s: Shape, mut f: impl FnMut(usize, usize)) {
        for n in 0..s.n {
            for c in 0..s.c {
                let group = match self {
                    NormGroups::PerChannel => c,
                    NormGroups::PerInstance => n * s.c + c,
                };
                f(group, (n * s.c + c) * s.plane());
            }
        }
    }
}

/// Per-group moments of a normalization, biased variance.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

pub(crate) fn normalize_forward<T: Real>(
    x: &Tensor<T>,
    groups: NormGroups,
    eps: f64,
) -> (Tensor<T>, GroupMoments, Vec<f64>) {
    let s = x.shape();
    let g = groups.count(s);
    let plane = s.plane();
    let count = match groups {
        NormGroups::PerChannel => s.n * plane,
        NormGroups::PerInstance => plane,
    };
    let xd = x.data();
    let mut sum = vec![0f64; g];
    groups.for_planes(s, |gi, off| {
        sum[gi] += xd[off..off + plane].iter().map(|v| v.to_f64()).sum::<f64>();
    });
    let mean: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
    let mut sq = vec![0f64; g];
    groups.for_planes(s, |gi, off| {
        let m = mean[gi];
        sq[gi] += xd[off..off + plane]
            .iter()
            .map(|v| (v.to_f64() - m).powi(2))
            .sum::<f64>();
    });
    let var: Vec<f64> = sq.iter().map(|v| v / count as f64).collect();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut out = Tensor::zeros(s);
    let od = out.data_mut();
    groups.for_planes(s, |gi, off| {
        let (m, is) = (mean[gi], inv_std[gi]);
        for (o, v) in od[off..off + plane].iter_mut().zip(&xd[off..off + plane]) {
            *o = T::from_f64((v.to_f64() - m) * is);
        }
    });
    (out, GroupMoments { mean, var, count }, inv_std)
}

/// `dx = inv_std * (g - mean(g) - x̂ * mean(g * x̂))` per group.
pub(crate) fn normalize_backward<T: Real>(
    gy: &Tensor<T>,
    xhat: &Tensor<T>,
    groups: NormGroups,
    inv_std: &[f64],
) -> Tensor<T> {
    let s = gy.shape();
    let g = groups.count(s);
    let plane = s.plane();
    let count = match groups {
        NormGroups::PerChannel => s.n * plane,
        NormGroups::PerInstance => plane,
    } as f64;
    let (gd, xd) = (gy.data(), xhat.data());
    let mut sg = vec![0f64; g];
    let mut sgx = vec![0f64; g];
    groups.for_planes(s, |gi, off| {
        for (a, b) in gd[off..off + plane].iter().zip(&xd[off..off + plane]) {
            let (a, b) = (a.to_f64(), b.to_f64());
            sg[gi] += a;
            sgx[gi] += a * b;
        }
    });
    let mut gx = Tensor::zeros(s);
    let out = gx.data_mut();
    groups.for_planes(s, |gi, off| {
        let (mg, mgx, is) = (sg[gi] / count, sgx[gi] / count, inv_std[gi]);
        for i in off..off + plane {
            out[i] = T::from_f64(is * (gd[i].to_f64() - mg - xd[i].to_f64() * mgx));
        }
    });
    gx
}

/// `out[n,k,i,j] = bank[labels[n,i,j], k]`.
pub(crate) fn guided_sample_forward<T: Real>(
    bank: &Tensor<T>,
    labels: &[u32],
    out_shape: Shape,
) -> Tensor<T> {
    let channels = bank.shape().c;
    let plane = out_shape.plane();
    let bd = bank.data();
    let mut out = Tensor::zeros(out_shape);
    par::for_each_chunk_mut(out.data_mut(), plane, |p, dst| {
        let (n, k) = (p / channels, p % channels);
        let lab = &labels[n * plane..(n + 1) * plane];
        for (o, &l) in dst.iter_mut().zip(lab) {
            *o = bd[l as usize * channels + k];
        }
    });
    out
}

/// Scatters each pixel's gradient into its class's bank entry.
pub(crate) fn guided_sample_backward<T: Real>(
    gy: &Tensor<T>,
    labels: &[u32],
    bank_shape: Shape,
) -> Tensor<T> {
    let s = gy.shape();
    let channels = s.c;
    let plane = s.plane();
    let mut acc = vec![0f64; bank_shape.numel()];
    let gd = gy.data();
    for n in 0..s.n {
        let lab = &labels[n * plane..(n + 1) * plane];
        for k in 0..channels {
            let src = &gd[(n * channels + k) * plane..(n * channels + k + 1) * plane];
            for (&l, v) in lab.iter().zip(src) {
                acc[l as usize * channels + k] += v.to_f64();
            }
        }
    }
    Tensor::from_vec(bank_shape, acc.into_iter().map(T::from_f64).collect())
        .expect("bank gradient shape")
}
