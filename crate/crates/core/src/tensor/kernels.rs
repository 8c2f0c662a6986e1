//! Forward/backward kernels for the non-convolution operators.

use crate::image::reflect_index;

const FRAC_1_SQRT_2: f32 = std::f32::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f32 = 0.398_942_3;

/// Error function to single precision: a rational odd/even polynomial on
/// `[-4, 4]`, outside which `erf` rounds to ±1. Branch-free, so loops over it
/// vectorize.
#[inline]
pub(crate) fn erf(x: f32) -> f32 {
    let x = x.clamp(-4.0, 4.0);
    let x2 = x * x;
    let mut p = x2 * -2.726_142_3e-10 + 2.770_681_4e-8;
    p = x2 * p - 2.101_024e-6;
    p = x2 * p - 5.692_506_4e-5;
    p = x2 * p - 7.349_906_3e-4;
    p = x2 * p - 2.954_600e-3;
    p = x2 * p - 1.609_603_3e-2;
    let mut q = x2 * -1.456_607_2e-5 - 2.133_740_6e-4;
    q = x2 * q - 1.682_827e-3;
    q = x2 * q - 7.373_329e-3;
    q = x2 * q - 1.426_474e-2;
    x * p / q
}

/// Exact GELU `x * Phi(x)`.
#[inline]
pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + erf(x * FRAC_1_SQRT_2))
}

/// `d/dx [x * Phi(x)] = Phi(x) + x * phi(x)`.
#[inline]
pub(crate) fn gelu_grad(x: f32) -> f32 {
    let cdf = 0.5 * (1.0 + erf(x * FRAC_1_SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
    cdf + x * pdf
}

pub(crate) struct GroupNormSaved {
    pub mean: Vec<f32>,
    pub inv_std: Vec<f32>,
}

/// Normalizes each (sample, group) over its channels and pixels with
/// population variance, then applies per-channel gain and bias.
pub(crate) fn group_norm_forward(
    x: &[f32],
    dims: [usize; 4],
    groups: usize,
    gain: &[f32],
    bias: &[f32],
    eps: f32,
) -> (Vec<f32>, GroupNormSaved) {
    let [n, c, h, w] = dims;
    let cg = c / groups;
    let span = cg * h * w;
    let hw = h * w;
    let mut out = vec![0.0f32; x.len()];
    let mut saved = GroupNormSaved {
        mean: Vec::with_capacity(n * groups),
        inv_std: Vec::with_capacity(n * groups),
    };
    for s in 0..n {
        for gi in 0..groups {
            let base = (s * c + gi * cg) * hw;
            let xs = &x[base..base + span];
            let mean = xs.iter().map(|&v| v as f64).sum::<f64>() / span as f64;
            let var = xs.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / span as f64;
            let inv_std = 1.0 / (var + eps as f64).sqrt();
            let (mean, inv_std) = (mean as f32, inv_std as f32);
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let off = base + ci * hw;
                for (o, &v) in out[off..off + hw].iter_mut().zip(&x[off..off + hw]) {
                    *o = (v - mean) * inv_std * gain[ch] + bias[ch];
                }
            }
            saved.mean.push(mean);
            saved.inv_std.push(inv_std);
        }
    }
    (out, saved)
}

pub(crate) struct GroupNormGrads {
    pub dx: Vec<f32>,
    pub dgain: Vec<f32>,
    pub dbias: Vec<f32>,
}

pub(crate) fn group_norm_backward(
    x: &[f32],
    dy: &[f32],
    dims: [usize; 4],
    groups: usize,
    gain: &[f32],
    saved: &GroupNormSaved,
) -> GroupNormGrads {
    let [n, c, h, w] = dims;
    let cg = c / groups;
    let hw = h * w;
    let count = (cg * hw) as f64;
    let mut dx = vec![0.0f32; x.len()];
    let mut dgain = vec![0.0f32; c];
    let mut dbias = vec![0.0f32; c];
    for s in 0..n {
        for gi in 0..groups {
            let k = s * groups + gi;
            let (mean, inv_std) = (saved.mean[k], saved.inv_std[k]);
            let base = (s * c + gi * cg) * hw;
            // Sums of dxhat and dxhat * xhat over the group.
            let mut sum_d = 0.0f64;
            let mut sum_dx = 0.0f64;
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let off = base + ci * hw;
                let mut dg = 0.0f64;
                let mut db = 0.0f64;
                for (&v, &g) in x[off..off + hw].iter().zip(&dy[off..off + hw]) {
                    let xhat = ((v - mean) * inv_std) as f64;
                    dg += g as f64 * xhat;
                    db += g as f64;
                }
                dgain[ch] += dg as f32;
                dbias[ch] += db as f32;
                sum_d += db * gain[ch] as f64;
                sum_dx += dg * gain[ch] as f64;
            }
            let (mean_d, mean_dx) = ((sum_d / count) as f32, (sum_dx / count) as f32);
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let off = base + ci * hw;
                for i in off..off + hw {
                    let xhat = (x[i] - mean) * inv_std;
                    let dxhat = dy[i] * gain[ch];
                    dx[i] = inv_std * (dxhat - mean_d - xhat * mean_dx);
                }
            }
        }
    }
    GroupNormGrads { dx, dgain, dbias }
}

/// Source taps for ×2 upsampling along one axis, half-pixel centers:
/// output `i` samples input position `(i + 0.5) / 2 - 0.5`, clamped to the edges.
pub(crate) fn upsample_taps(len: usize) -> Vec<(usize, usize, f32)> {
    (0..2 * len)
        .map(|i| {
            let src = ((i as f32 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}

pub(crate) fn upsample2_forward(x: &[f32], dims: [usize; 4]) -> Vec<f32> {
    let [n, c, h, w] = dims;
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; n * c * ho * wo];
    for plane in 0..n * c {
        let src = &x[plane * h * w..][..h * w];
        let dst = &mut out[plane * ho * wo..][..ho * wo];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * wo + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(dy: &[f32], dims: [usize; 4]) -> Vec<f32> {
    let [n, c, h, w] = dims;
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let (ho, wo) = (2 * h, 2 * w);
    let mut dx = vec![0.0f32; n * c * h * w];
    for plane in 0..n * c {
        let g = &dy[plane * ho * wo..][..ho * wo];
        let d = &mut dx[plane * h * w..][..h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * wo + ox];
                d[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                d[y0 * w + x1] += v * (1.0 - fy) * fx;
                d[y1 * w + x0] += v * fy * (1.0 - fx);
                d[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    dx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

/// Reflect-101 padding of every plane; maps each output pixel to its source.
pub(crate) fn pad_reflect_index(dims: [usize; 4], p: Padding) -> Vec<usize> {
    let [_, _, h, w] = dims;
    let (ho, wo) = (h + p.top + p.bottom, w + p.left + p.right);
    let mut idx = Vec::with_capacity(ho * wo);
    for oy in 0..ho {
        let sy = reflect_signed(oy as isize - p.top as isize, h);
        for ox in 0..wo {
            let sx = reflect_signed(ox as isize - p.left as isize, w);
            idx.push(sy * w + sx);
        }
    }
    idx
}

fn reflect_signed(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    reflect_index(i.rem_euclid(period) as usize, n)
}
