//! Grouped 2-D cross-correlation, forward and backward.
//!
//! Dense groups go through im2col + GEMM; depthwise convolutions (one input
//! and one output channel per group) use a direct loop.

use super::gemm;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dParams {
    pub fn same3x3() -> Self {
        Self {
            padding: 1,
            ..Self::default()
        }
    }

    pub fn depthwise3x3(channels: usize) -> Self {
        Self {
            padding: 1,
            groups: channels,
            ..Self::default()
        }
    }

    pub fn down3x3() -> Self {
        Self {
            stride: 2,
            padding: 1,
            groups: 1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        x: &[usize],
        weight: &[usize],
        bias: Option<&[usize]>,
        p: Conv2dParams,
    ) -> Result<Self> {
        let err = |why: &str| {
            Error::Shape(format!(
                "conv2d: {why} (input {x:?}, weight {weight:?}, bias {bias:?}, stride {}, padding {}, groups {})",
                p.stride, p.padding, p.groups
            ))
        };
        let (&[n, cin, h, w], &[cout, cin_g, kh, kw]) = (x, weight) else {
            return Err(err("input and weight must be rank 4"));
        };
        if p.groups == 0 || p.stride == 0 {
            return Err(err("groups and stride must be positive"));
        }
        if cin % p.groups != 0 || cout % p.groups != 0 {
            return Err(err("channels not divisible by groups"));
        }
        if cin / p.groups != cin_g {
            return Err(err("weight input channels != input channels / groups"));
        }
        if let Some(b) = bias {
            if b != [cout] {
                return Err(err("bias must have one value per output channel"));
            }
        }
        if h + 2 * p.padding < kh || w + 2 * p.padding < kw {
            return Err(err("kernel larger than padded input"));
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride: p.stride,
            pad: p.padding,
            groups: p.groups,
            ho: (h + 2 * p.padding - kh) / p.stride + 1,
            wo: (w + 2 * p.padding - kw) / p.stride + 1,
        })
    }

    pub fn out_dims(&self) -> Vec<usize> {
        vec![self.n, self.cout, self.ho, self.wo]
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn is_depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    /// Output columns `ox` for which `ox * stride + k - pad` lands inside `0..len`.
    #[inline]
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > k { (self.pad - k).div_ceil(s) } else { 0 };
        let hi = if len + self.pad > k {
            ((len + self.pad - k - 1) / s + 1).min(out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let p = g.ho * g.wo;
    cols.fill(0.0);
    for c in 0..g.cin_g() {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (oy0, oy1) = g.valid_range(ki, g.h, g.ho);
            for kj in 0..g.kw {
                let (ox0, ox1) = g.valid_range(kj, g.w, g.wo);
                let row = &mut cols[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ki - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        let ix0 = ox0 + kj - g.pad;
                        dst[ox0..ox1].copy_from_slice(&src[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            dst[ox] = src[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let p = g.ho * g.wo;
    for c in 0..g.cin_g() {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (oy0, oy1) = g.valid_range(ki, g.h, g.ho);
            for kj in 0..g.kw {
                let (ox0, ox1) = g.valid_range(kj, g.w, g.wo);
                let row = &cols[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ki - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let src = &row[oy * g.wo..(oy + 1) * g.wo];
                    for ox in ox0..ox1 {
                        dst[ox * g.stride + kj - g.pad] += src[ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn forward(x: &[f32], w: &[f32], b: Option<&[f32]>, g: &ConvGeom) -> Vec<f32> {
    let p = g.ho * g.wo;
    let mut out = vec![0.0f32; g.n * g.cout * p];
    if g.is_depthwise() {
        depthwise_forward(x, w, g, &mut out);
    } else {
        let k = g.col_rows();
        let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
        for n in 0..g.n {
            for gi in 0..g.groups {
                let xg = &x[(n * g.cin + gi * cin_g) * g.h * g.w..][..cin_g * g.h * g.w];
                let wg = &w[gi * cout_g * k..][..cout_g * k];
                let yg = &mut out[(n * g.cout + gi * cout_g) * p..][..cout_g * p];
                let rhs = if g.is_pointwise() {
                    xg
                } else {
                    im2col(xg, g, &mut cols);
                    &cols
                };
                gemm(cout_g, k, p, wg, false, rhs, false, yg, 0.0);
            }
        }
    }
    if let Some(b) = b {
        for n in 0..g.n {
            for (co, &bv) in b.iter().enumerate() {
                out[(n * g.cout + co) * p..][..p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

fn depthwise_forward(x: &[f32], w: &[f32], g: &ConvGeom, out: &mut [f32]) {
    let p = g.ho * g.wo;
    for n in 0..g.n {
        for c in 0..g.cout {
            let plane = &x[(n * g.cin + c) * g.h * g.w..][..g.h * g.w];
            let kernel = &w[c * g.kh * g.kw..][..g.kh * g.kw];
            let dst = &mut out[(n * g.cout + c) * p..][..p];
            for ki in 0..g.kh {
                let (oy0, oy1) = g.valid_range(ki, g.h, g.ho);
                for kj in 0..g.kw {
                    let (ox0, ox1) = g.valid_range(kj, g.w, g.wo);
                    let wv = kernel[ki * g.kw + kj];
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ki - g.pad;
                        let src = &plane[iy * g.w..(iy + 1) * g.w];
                        let row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        if g.stride == 1 {
                            let ix0 = ox0 + kj - g.pad;
                            for (o, &s) in row[ox0..ox1].iter_mut().zip(&src[ix0..]) {
                                *o += wv * s;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                row[ox] += wv * src[ox * g.stride + kj - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f32>>,
    pub dw: Option<Vec<f32>>,
    pub db: Option<Vec<f32>>,
}

pub(crate) fn backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads {
    let (need_dx, need_dw, need_db) = need;
    let p = g.ho * g.wo;
    let db = need_db.then(|| {
        let mut db = vec![0.0f32; g.cout];
        for n in 0..g.n {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += dy[(n * g.cout + co) * p..][..p].iter().sum::<f32>();
            }
        }
        db
    });
    let mut dx = need_dx.then(|| vec![0.0f32; x.len()]);
    let mut dw = need_dw.then(|| vec![0.0f32; w.len()]);

    if g.is_depthwise() {
        depthwise_backward(x, w, dy, g, dx.as_deref_mut(), dw.as_deref_mut());
    } else if need_dx || need_dw {
        let k = g.col_rows();
        let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
        let mut dcols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
        for n in 0..g.n {
            for gi in 0..g.groups {
                let x_off = (n * g.cin + gi * cin_g) * g.h * g.w;
                let xg = &x[x_off..][..cin_g * g.h * g.w];
                let wg = &w[gi * cout_g * k..][..cout_g * k];
                let dyg = &dy[(n * g.cout + gi * cout_g) * p..][..cout_g * p];
                if let Some(dw) = dw.as_deref_mut() {
                    let dwg = &mut dw[gi * cout_g * k..][..cout_g * k];
                    let rhs = if g.is_pointwise() {
                        xg
                    } else {
                        im2col(xg, g, &mut cols);
                        &cols
                    };
                    gemm(cout_g, p, k, dyg, false, rhs, true, dwg, 1.0);
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let dxg = &mut dx[x_off..][..cin_g * g.h * g.w];
                    if g.is_pointwise() {
                        gemm(k, cout_g, p, wg, true, dyg, false, dxg, 1.0);
                    } else {
                        gemm(k, cout_g, p, wg, true, dyg, false, &mut dcols, 0.0);
                        col2im_add(&dcols, g, dxg);
                    }
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

fn depthwise_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    g: &ConvGeom,
    mut dx: Option<&mut [f32]>,
    mut dw: Option<&mut [f32]>,
) {
    let p = g.ho * g.wo;
    for n in 0..g.n {
        for c in 0..g.cout {
            let plane_off = (n * g.cin + c) * g.h * g.w;
            let plane = &x[plane_off..][..g.h * g.w];
            let grad = &dy[(n * g.cout + c) * p..][..p];
            for ki in 0..g.kh {
                let (oy0, oy1) = g.valid_range(ki, g.h, g.ho);
                for kj in 0..g.kw {
                    let (ox0, ox1) = g.valid_range(kj, g.w, g.wo);
                    let widx = (c * g.kh + ki) * g.kw + kj;
                    let wv = w[widx];
                    let mut acc = 0.0f32;
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ki - g.pad;
                        let grow = &grad[oy * g.wo..(oy + 1) * g.wo];
                        let xrow = &plane[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let ix0 = ox0 + kj - g.pad;
                            let gs = &grow[ox0..ox1];
                            acc += dot(gs, &xrow[ix0..ix0 + gs.len()]);
                            if let Some(dx) = dx.as_deref_mut() {
                                let drow = &mut dx[plane_off + iy * g.w + ix0..][..gs.len()];
                                for (d, &gv) in drow.iter_mut().zip(gs) {
                                    *d += wv * gv;
                                }
                            }
                            continue;
                        }
                        for ox in ox0..ox1 {
                            let ix = ox * g.stride + kj - g.pad;
                            acc += grow[ox] * xrow[ix];
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            let drow = &mut dx[plane_off + iy * g.w..][..g.w];
                            for ox in ox0..ox1 {
                                drow[ox * g.stride + kj - g.pad] += wv * grow[ox];
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
}

/// Dot product with eight independent partial sums so it vectorizes.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    lanes.iter().sum::<f32>() + tail
}
