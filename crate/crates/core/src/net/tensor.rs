//! Dense `C x H x W` tensors and the convolution-style kernels of the
//! network, each with its adjoint.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Tensor { c, h, w, data }
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(self.c, self.h, self.w)
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|a| *a *= s);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { c: self.c, h: self.h, w: self.w, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

pub fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

/// Range of output indices whose tap `kk` lands inside `[0, size)`.
#[inline]
fn valid_range(out: usize, size: usize, kk: usize, stride: usize, pad: usize) -> (usize, usize) {
    // i = o * stride + kk - pad
    let lo = if kk >= pad { 0 } else { (pad - kk).div_ceil(stride) };
    let hi_num = size as isize - 1 + pad as isize - kk as isize;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize / stride + 1).min(out);
    (lo.min(hi), hi)
}

/// Input planes with the columns split by phase modulo the stride, so a
/// strided tap reads a contiguous run. Layout `[c][phase][h][hw]`.
struct Phased<'a> {
    data: Cow<'a, [f64]>,
    stride: usize,
    h: usize,
    hw: usize,
}

impl<'a> Phased<'a> {
    fn new(x: &'a Tensor, stride: usize) -> Self {
        if stride == 1 {
            return Phased { data: Cow::Borrowed(&x.data), stride, h: x.h, hw: x.w };
        }
        let hw = x.w.div_ceil(stride);
        let mut data = vec![0.0; x.c * stride * x.h * hw];
        for c in 0..x.c {
            for iy in 0..x.h {
                let row = &x.data[(c * x.h + iy) * x.w..][..x.w];
                for p in 0..stride {
                    let dst = &mut data[((c * stride + p) * x.h + iy) * hw..][..hw];
                    dst.iter_mut().zip(row.iter().skip(p).step_by(stride)).for_each(|(d, &v)| *d = v);
                }
            }
        }
        Phased { data: Cow::Owned(data), stride, h: x.h, hw }
    }

    fn zeros(c: usize, h: usize, w: usize, stride: usize) -> Phased<'static> {
        let hw = w.div_ceil(stride);
        Phased { data: Cow::Owned(vec![0.0; c * stride * h * hw]), stride, h, hw }
    }

    #[inline]
    fn row(&self, c: usize, phase: usize, iy: usize) -> &[f64] {
        let off = ((c * self.stride + phase) * self.h + iy) * self.hw;
        &self.data[off..off + self.hw]
    }

    #[inline]
    fn row_mut(&mut self, c: usize, phase: usize, iy: usize) -> &mut [f64] {
        let off = ((c * self.stride + phase) * self.h + iy) * self.hw;
        &mut self.data.to_mut()[off..off + self.hw]
    }

    /// Adds the phase-split planes back into `gx`.
    fn scatter_into(&self, gx: &mut Tensor) {
        if self.stride == 1 {
            gx.data.iter_mut().zip(self.data.iter()).for_each(|(g, v)| *g += v);
            return;
        }
        let s = self.stride;
        for c in 0..gx.c {
            for iy in 0..gx.h {
                let w = gx.w;
                let row = &mut gx.data[(c * gx.h + iy) * w..][..w];
                for p in 0..s {
                    let src = &self.data[((c * s + p) * self.h + iy) * self.hw..][..self.hw];
                    row.iter_mut().skip(p).step_by(s).zip(src).for_each(|(g, &v)| *g += v);
                }
            }
        }
    }
}

/// Per horizontal tap: phase, start offset into the phase row for output
/// column `x0`, and the valid output column range.
fn column_taps(k: usize, stride: usize, pad: usize, out_w: usize, in_w: usize) -> Vec<(usize, usize, usize, usize)> {
    (0..k)
        .map(|kx| {
            let d = kx as isize - pad as isize;
            let phase = d.rem_euclid(stride as isize) as usize;
            let m = d.div_euclid(stride as isize);
            let (x0, x1) = valid_range(out_w, in_w, kx, stride, pad);
            let start = if x1 > x0 { (x0 as isize + m) as usize } else { 0 };
            (phase, start, x0, x1)
        })
        .collect()
}

/// Taps of one phase with consecutive source offsets, processed in a
/// single pass over the row interior.
struct TapGroup {
    phase: usize,
    /// Kernel columns of the group, in offset order.
    kx: Vec<usize>,
    /// Source index of output column `lo` for the first tap.
    start: usize,
    /// Output columns where every tap of the group is in bounds.
    lo: usize,
    hi: usize,
}

fn tap_groups(taps: &[(usize, usize, usize, usize)], stride: usize) -> Vec<TapGroup> {
    let mut groups = Vec::new();
    for phase in 0..stride {
        let kx: Vec<usize> = (0..taps.len()).filter(|&kx| taps[kx].0 == phase).collect();
        if kx.is_empty() {
            continue;
        }
        let lo = kx.iter().map(|&k| taps[k].2).max().unwrap_or(0);
        let hi = kx.iter().map(|&k| taps[k].3).min().unwrap_or(0).max(lo);
        let (_, s0, x0, _) = taps[kx[0]];
        let start = if hi > lo { s0 + (lo - x0) } else { 0 };
        groups.push(TapGroup { phase, kx, start, lo, hi });
    }
    groups
}

#[inline(always)]
fn fused_k<const K: usize>(y: &mut [f64], src: &[f64], w: &[f64]) {
    let n = y.len();
    let w: [f64; K] = core::array::from_fn(|t| w[t]);
    let src = &src[..n + K - 1];
    for j in 0..n {
        let mut acc = y[j];
        for t in 0..K {
            acc += w[t] * src[j + t];
        }
        y[j] = acc;
    }
}

/// `y[j] += sum_t w[t] * src[j + t]`.
fn fused(y: &mut [f64], src: &[f64], w: &[f64]) {
    match w.len() {
        1 => fused_k::<1>(y, src, w),
        2 => fused_k::<2>(y, src, w),
        3 => fused_k::<3>(y, src, w),
        4 => fused_k::<4>(y, src, w),
        5 => fused_k::<5>(y, src, w),
        _ => {
            for (t, &wv) in w.iter().enumerate() {
                axpy(y, wv, &src[t..t + y.len()]);
            }
        }
    }
}

/// Adds one input row's contribution to an output row for all horizontal
/// taps of kernel row `wrow`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn row_accumulate(
    yrow: &mut [f64],
    wrow: &[f64],
    taps: &[(usize, usize, usize, usize)],
    groups: &[TapGroup],
    px: &Phased,
    c: usize,
    iy: usize,
    wbuf: &mut [f64],
) {
    for g in groups {
        let src = px.row(c, g.phase, iy);
        let (a, b) = if g.hi > g.lo {
            for (i, &kx) in g.kx.iter().enumerate() {
                wbuf[i] = wrow[kx];
            }
            fused(&mut yrow[g.lo..g.hi], &src[g.start..], &wbuf[..g.kx.len()]);
            (g.lo, g.hi)
        } else {
            (usize::MAX, usize::MAX)
        };
        for &kx in &g.kx {
            let (_, start, x0, x1) = taps[kx];
            let left = a.min(x1);
            if left > x0 {
                axpy(&mut yrow[x0..left], wrow[kx], &src[start..start + (left - x0)]);
            }
            let right = b.max(x0);
            if x1 > right {
                let s = start + (right - x0);
                axpy(&mut yrow[right..x1], wrow[kx], &src[s..s + (x1 - right)]);
            }
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense convolution. Weights are `[cout][cin][k][k]`.
pub fn conv2d(x: &Tensor, w: &[f64], b: Option<&[f64]>, cout: usize, k: usize, stride: usize, pad: usize) -> Tensor {
    let cin = x.c;
    debug_assert_eq!(w.len(), cout * cin * k * k);
    let (oh, ow) = (conv_out(x.h, k, stride, pad), conv_out(x.w, k, stride, pad));
    let px = Phased::new(x, stride);
    let taps = column_taps(k, stride, pad, ow, x.w);
    let groups = tap_groups(&taps, stride);
    let mut wbuf = vec![0.0; k];
    let mut y = Tensor::zeros(cout, oh, ow);
    let op = oh * ow;
    for co in 0..cout {
        let yc = &mut y.data[co * op..(co + 1) * op];
        if let Some(b) = b {
            yc.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..cin {
            for ky in 0..k {
                let (y0, y1) = valid_range(oh, x.h, ky, stride, pad);
                let wrow = &w[((co * cin + ci) * k + ky) * k..][..k];
                for oy in y0..y1 {
                    let iy = oy * stride + ky - pad;
                    let yrow = &mut yc[oy * ow..(oy + 1) * ow];
                    row_accumulate(yrow, wrow, &taps, &groups, &px, ci, iy, &mut wbuf);
                }
            }
        }
    }
    y
}

/// Adjoint of [`conv2d`]. Accumulates into `gw`, `gb` and, when given, `gx`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &Tensor,
    w: &[f64],
    gy: &Tensor,
    k: usize,
    stride: usize,
    pad: usize,
    gw: &mut [f64],
    gb: Option<&mut [f64]>,
    gx: Option<&mut Tensor>,
) {
    let (cin, cout) = (x.c, gy.c);
    let (oh, ow) = (gy.h, gy.w);
    if let Some(gb) = gb {
        for co in 0..cout {
            gb[co] += gy.channel(co).iter().sum::<f64>();
        }
    }
    let px = Phased::new(x, stride);
    let taps = column_taps(k, stride, pad, ow, x.w);
    let mut gph = gx.as_ref().map(|_| Phased::zeros(cin, x.h, x.w, stride));
    for co in 0..cout {
        let gc = gy.channel(co);
        for ci in 0..cin {
            for ky in 0..k {
                let (y0, y1) = valid_range(oh, x.h, ky, stride, pad);
                for (kx, &(phase, start, x0, x1)) in taps.iter().enumerate() {
                    let widx = ((co * cin + ci) * k + ky) * k + kx;
                    let wv = w[widx];
                    let n = x1 - x0;
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * stride + ky - pad;
                        let grow = &gc[oy * ow + x0..oy * ow + x1];
                        acc += dot(grow, &px.row(ci, phase, iy)[start..start + n]);
                        if let Some(g) = gph.as_mut() {
                            axpy(&mut g.row_mut(ci, phase, iy)[start..start + n], wv, grow);
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    if let (Some(g), Some(gx)) = (gph, gx) {
        g.scatter_into(gx);
    }
}

/// Depthwise convolution. Weights are `[c][k][k]`.
pub fn depthwise(x: &Tensor, w: &[f64], b: &[f64], k: usize, stride: usize, pad: usize) -> Tensor {
    let c = x.c;
    let (oh, ow) = (conv_out(x.h, k, stride, pad), conv_out(x.w, k, stride, pad));
    let px = Phased::new(x, stride);
    let taps = column_taps(k, stride, pad, ow, x.w);
    let groups = tap_groups(&taps, stride);
    let mut wbuf = vec![0.0; k];
    let mut y = Tensor::zeros(c, oh, ow);
    let op = oh * ow;
    for ch in 0..c {
        let yc = &mut y.data[ch * op..(ch + 1) * op];
        yc.iter_mut().for_each(|v| *v = b[ch]);
        for ky in 0..k {
            let (y0, y1) = valid_range(oh, x.h, ky, stride, pad);
            let wrow = &w[(ch * k + ky) * k..][..k];
            for oy in y0..y1 {
                let iy = oy * stride + ky - pad;
                let yrow = &mut yc[oy * ow..(oy + 1) * ow];
                row_accumulate(yrow, wrow, &taps, &groups, &px, ch, iy, &mut wbuf);
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn depthwise_backward(
    x: &Tensor,
    w: &[f64],
    gy: &Tensor,
    k: usize,
    stride: usize,
    pad: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    gx: Option<&mut Tensor>,
) {
    let (oh, ow) = (gy.h, gy.w);
    let px = Phased::new(x, stride);
    let taps = column_taps(k, stride, pad, ow, x.w);
    let mut gph = gx.as_ref().map(|_| Phased::zeros(x.c, x.h, x.w, stride));
    for ch in 0..x.c {
        let gc = gy.channel(ch);
        gb[ch] += gc.iter().sum::<f64>();
        for ky in 0..k {
            let (y0, y1) = valid_range(oh, x.h, ky, stride, pad);
            for (kx, &(phase, start, x0, x1)) in taps.iter().enumerate() {
                let widx = (ch * k + ky) * k + kx;
                let wv = w[widx];
                let n = x1 - x0;
                let mut acc = 0.0;
                for oy in y0..y1 {
                    let iy = oy * stride + ky - pad;
                    let grow = &gc[oy * ow + x0..oy * ow + x1];
                    acc += dot(grow, &px.row(ch, phase, iy)[start..start + n]);
                    if let Some(g) = gph.as_mut() {
                        axpy(&mut g.row_mut(ch, phase, iy)[start..start + n], wv, grow);
                    }
                }
                gw[widx] += acc;
            }
        }
    }
    if let (Some(g), Some(gx)) = (gph, gx) {
        g.scatter_into(gx);
    }
}

/// 1x1 convolution, weights `[cout][cin]`.
pub fn pointwise(x: &Tensor, w: &[f64], b: &[f64], cout: usize) -> Tensor {
    let cin = x.c;
    let n = x.plane();
    let mut y = Tensor::zeros(cout, x.h, x.w);
    for co in 0..cout {
        let yc = &mut y.data[co * n..(co + 1) * n];
        yc.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..cin {
            let wv = w[co * cin + ci];
            for (yv, xv) in yc.iter_mut().zip(x.channel(ci)) {
                *yv += wv * xv;
            }
        }
    }
    y
}

pub fn pointwise_backward(x: &Tensor, w: &[f64], gy: &Tensor, gw: &mut [f64], gb: &mut [f64], gx: Option<&mut Tensor>) {
    let (cin, cout) = (x.c, gy.c);
    for co in 0..cout {
        let gc = gy.channel(co);
        gb[co] += gc.iter().sum::<f64>();
        for ci in 0..cin {
            gw[co * cin + ci] += gc.iter().zip(x.channel(ci)).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    if let Some(gx) = gx {
        for ci in 0..cin {
            let n = gx.plane();
            let gxc = &mut gx.data[ci * n..(ci + 1) * n];
            for co in 0..cout {
                let wv = w[co * cin + ci];
                for (g, v) in gxc.iter_mut().zip(gy.channel(co)) {
                    *g += wv * v;
                }
            }
        }
    }
}

pub fn relu_inplace(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Masks `g` where the ReLU output `y` was zero.
pub fn relu_backward_inplace(y: &Tensor, g: &mut Tensor) {
    g.data.iter_mut().zip(&y.data).for_each(|(g, y)| {
        if *y <= 0.0 {
            *g = 0.0
        }
    });
}

pub fn avgpool2(x: &Tensor) -> Tensor {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.c, oh, ow);
    for c in 0..x.c {
        let xc = x.channel(c);
        for oy in 0..oh {
            for ox in 0..ow {
                let i = 2 * oy * x.w + 2 * ox;
                y.data[(c * oh + oy) * ow + ox] = 0.25 * (xc[i] + xc[i + 1] + xc[i + x.w] + xc[i + x.w + 1]);
            }
        }
    }
    y
}

pub fn avgpool2_backward(gy: &Tensor, h: usize, w: usize) -> Tensor {
    let mut gx = Tensor::zeros(gy.c, h, w);
    for c in 0..gy.c {
        for oy in 0..gy.h {
            for ox in 0..gy.w {
                let g = 0.25 * gy.data[(c * gy.h + oy) * gy.w + ox];
                let base = c * h * w + 2 * oy * w + 2 * ox;
                gx.data[base] += g;
                gx.data[base + 1] += g;
                gx.data[base + w] += g;
                gx.data[base + w + 1] += g;
            }
        }
    }
    gx
}

/// Zero-extends the channel dimension to `c`.
pub fn pad_channels(x: &Tensor, c: usize) -> Tensor {
    let mut data = x.data.clone();
    data.resize(c * x.plane(), 0.0);
    Tensor { c, h: x.h, w: x.w, data }
}

pub fn upsample_nearest2(x: &Tensor) -> Tensor {
    let (oh, ow) = (x.h * 2, x.w * 2);
    let mut y = Tensor::zeros(x.c, oh, ow);
    for c in 0..x.c {
        for oy in 0..oh {
            for ox in 0..ow {
                y.data[(c * oh + oy) * ow + ox] = x.data[(c * x.h + oy / 2) * x.w + ox / 2];
            }
        }
    }
    y
}

pub fn upsample_nearest2_backward(gy: &Tensor) -> Tensor {
    let (h, w) = (gy.h / 2, gy.w / 2);
    let mut gx = Tensor::zeros(gy.c, h, w);
    for c in 0..gy.c {
        for oy in 0..gy.h {
            for ox in 0..gy.w {
                gx.data[(c * h + oy / 2) * w + ox / 2] += gy.data[(c * gy.h + oy) * gy.w + ox];
            }
        }
    }
    gx
}

pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor { c: a.c + b.c, h: a.h, w: a.w, data }
}

pub fn split(g: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let n = ca * g.plane();
    (
        Tensor { c: ca, h: g.h, w: g.w, data: g.data[..n].to_vec() },
        Tensor { c: g.c - ca, h: g.h, w: g.w, data: g.data[n..].to_vec() },
    )
}

/// Sampling taps for one axis of a half-pixel-centred bilinear resize.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = crate::math::floor(s) as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resize on a raw plane stack (`c` planes of `h x w`).
pub fn resize_bilinear_planes(src: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    if h == oh && w == ow {
        return src.to_vec();
    }
    let ry = bilinear_taps(h, oh);
    let rx = bilinear_taps(w, ow);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let s = &src[ch * h * w..(ch + 1) * h * w];
        let o = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ry.iter().enumerate() {
            let r0 = &s[y0 * w..(y0 + 1) * w];
            let r1 = &s[y1 * w..(y1 + 1) * w];
            for (ox, &(x0, x1, fx)) in rx.iter().enumerate() {
                let top = r0[x0] + fx * (r0[x1] - r0[x0]);
                let bot = r1[x0] + fx * (r1[x1] - r1[x0]);
                o[oy * ow + ox] = top + fy * (bot - top);
            }
        }
    }
    out
}

pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    Tensor { c: x.c, h: oh, w: ow, data: resize_bilinear_planes(&x.data, x.c, x.h, x.w, oh, ow) }
}

pub fn resize_bilinear_backward(gy: &Tensor, h: usize, w: usize) -> Tensor {
    if gy.h == h && gy.w == w {
        return gy.clone();
    }
    let ry = bilinear_taps(h, gy.h);
    let rx = bilinear_taps(w, gy.w);
    let mut gx = Tensor::zeros(gy.c, h, w);
    for ch in 0..gy.c {
        let g = gy.channel(ch);
        let base = ch * h * w;
        for (oy, &(y0, y1, fy)) in ry.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in rx.iter().enumerate() {
                let v = g[oy * gy.w + ox];
                gx.data[base + y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                gx.data[base + y0 * w + x1] += v * (1.0 - fy) * fx;
                gx.data[base + y1 * w + x0] += v * fy * (1.0 - fx);
                gx.data[base + y1 * w + x1] += v * fy * fx;
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    // direct definition, no range bookkeeping
    fn conv_naive(x: &Tensor, w: &[f64], cout: usize, k: usize, s: usize, p: usize) -> Tensor {
        let (oh, ow) = (conv_out(x.h, k, s, p), conv_out(x.w, k, s, p));
        let mut y = Tensor::zeros(cout, oh, ow);
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..x.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                    acc += w[((co * x.c + ci) * k + ky) * k + kx] * x.at(ci, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    y.data[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, p) in &[(3, 1, 1), (4, 2, 1), (5, 2, 2), (1, 1, 0)] {
            let x = rand_tensor(&mut rng, 3, 8, 10);
            let w: Vec<f64> = (0..2 * 3 * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = conv2d(&x, &w, None, 2, k, s, p);
            let b = conv_naive(&x, &w, 2, k, s, p);
            for (u, v) in a.data.iter().zip(&b.data) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depthwise_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, 3, 8, 12);
        let w: Vec<f64> = (0..3 * 25).map(|_| rng.random_range(-1.0..1.0)).collect();
        for s in [1, 2] {
            let a = depthwise(&x, &w, &[0.0; 3], 5, s, 2);
            for ch in 0..3 {
                let xc = Tensor::from_vec(1, 8, 12, x.channel(ch).to_vec());
                let b = conv_naive(&xc, &w[ch * 25..(ch + 1) * 25], 1, 5, s, 2);
                for (u, v) in a.channel(ch).iter().zip(&b.data) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }

    // <A x, y> == <x, A^T y> for every linear kernel
    #[test]
    fn adjoint_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, 2, 8, 12);

        let w: Vec<f64> = (0..3 * 2 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = conv2d(&x, &w, None, 3, 4, 2, 1);
        let gy = rand_tensor(&mut rng, y.c, y.h, y.w);
        let mut gx = x.zeros_like();
        let mut gw = vec![0.0; w.len()];
        conv2d_backward(&x, &w, &gy, 4, 2, 1, &mut gw, None, Some(&mut gx));
        assert!((dot(&y, &gy) - dot(&x, &gx)).abs() < 1e-10);
        // conv is also linear in w
        let gw_dot: f64 = gw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((dot(&y, &gy) - gw_dot).abs() < 1e-10);

        let wd: Vec<f64> = (0..2 * 25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = depthwise(&x, &wd, &[0.0; 2], 5, 2, 2);
        let gy = rand_tensor(&mut rng, y.c, y.h, y.w);
        let mut gx = x.zeros_like();
        let (mut gw, mut gb) = (vec![0.0; 50], vec![0.0; 2]);
        depthwise_backward(&x, &wd, &gy, 5, 2, 2, &mut gw, &mut gb, Some(&mut gx));
        assert!((dot(&y, &gy) - dot(&x, &gx)).abs() < 1e-10);

        let y = avgpool2(&x);
        let gy = rand_tensor(&mut rng, y.c, y.h, y.w);
        assert!((dot(&y, &gy) - dot(&x, &avgpool2_backward(&gy, x.h, x.w))).abs() < 1e-10);

        let y = upsample_nearest2(&x);
        let gy = rand_tensor(&mut rng, y.c, y.h, y.w);
        assert!((dot(&y, &gy) - dot(&x, &upsample_nearest2_backward(&gy))).abs() < 1e-10);

        for (oh, ow) in [(16, 24), (32, 48), (8, 12)] {
            let y = resize_bilinear(&x, oh, ow);
            let gy = rand_tensor(&mut rng, y.c, y.h, y.w);
            assert!((dot(&y, &gy) - dot(&x, &resize_bilinear_backward(&gy, x.h, x.w))).abs() < 1e-10);
        }
    }

    #[test]
    fn bilinear_preserves_constants() {
        let x = Tensor::from_vec(1, 3, 4, vec![0.7; 12]);
        let y = resize_bilinear(&x, 12, 16);
        assert!(y.data.iter().all(|v| (v - 0.7).abs() < 1e-15));
    }
}
