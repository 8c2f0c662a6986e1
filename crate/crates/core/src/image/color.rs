//! Grayscale and CIE Lab conversions. RGB is treated as sRGB with a D65 white.

use super::{ImageF32, Image};
use crate::error::{Error, Result};

/// Rec. 601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

#[inline]
pub(crate) fn luma(r: f32, g: f32, b: f32) -> f32 {
    LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
}

pub fn rgb_to_gray(img: &ImageF32) -> Result<ImageF32> {
    if img.channels() == 1 {
        return Err(Error::Config("rgb_to_gray: image is already grayscale".into()));
    }
    let data = img.pixels().map(|p| luma(p[0], p[1], p[2])).collect();
    Image::new(img.width(), img.height(), 1, data)
}

// sRGB primaries -> XYZ, D65.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

// Reference white is the image of RGB (1,1,1) so that white maps to a = b = 0.
const WHITE: [f64; 3] = [
    RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2],
    RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2],
    RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2],
];

const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

#[inline]
fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

#[inline]
fn lab_f_inv(f: f64) -> f64 {
    let t = f * f * f;
    if t > EPSILON {
        t
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

pub(crate) fn rgb_pixel_to_lab(rgb: [f32; 3]) -> [f32; 3] {
    let lin = rgb.map(|v| srgb_to_linear(v as f64));
    let mut xyz = [0.0f64; 3];
    for (row, out) in RGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        *out = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / WHITE[0]);
    let fy = lab_f(xyz[1] / WHITE[1]);
    let fz = lab_f(xyz[2] / WHITE[2]);
    [
        (116.0 * fy - 16.0) as f32,
        (500.0 * (fx - fy)) as f32,
        (200.0 * (fy - fz)) as f32,
    ]
}

pub(crate) fn lab_pixel_to_rgb(lab: [f32; 3]) -> [f32; 3] {
    let [l, a, b] = lab.map(|v| v as f64);
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let xyz = [
        lab_f_inv(fx) * WHITE[0],
        lab_f_inv(fy) * WHITE[1],
        lab_f_inv(fz) * WHITE[2],
    ];
    let mut rgb = [0.0f32; 3];
    for (row, out) in XYZ_TO_RGB.iter().zip(rgb.iter_mut()) {
        let lin = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
        *out = linear_to_srgb(lin.max(0.0)).clamp(0.0, 1.0) as f32;
    }
    rgb
}

/// Planar CIE Lab image. `l` is in [0, 100].
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f32>,
    pub a: Vec<f32>,
    pub b: Vec<f32>,
}

pub fn rgb_to_lab(img: &ImageF32) -> Result<LabImage> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!(
            "rgb_to_lab expects 3 channels, got {}",
            img.channels()
        )));
    }
    let n = img.num_pixels();
    let mut lab = LabImage {
        width: img.width(),
        height: img.height(),
        l: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
    };
    for p in img.pixels() {
        let [l, a, b] = rgb_pixel_to_lab([p[0], p[1], p[2]]);
        lab.l.push(l);
        lab.a.push(a);
        lab.b.push(b);
    }
    Ok(lab)
}

/// Inverse of [`rgb_to_lab`]; out-of-gamut results are clamped to [0, 1].
pub fn lab_to_rgb(lab: &LabImage) -> Result<ImageF32> {
    let n = lab.width * lab.height;
    if lab.l.len() != n || lab.a.len() != n || lab.b.len() != n {
        return Err(Error::Shape("lab planes do not match image dims".into()));
    }
    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        data.extend(lab_pixel_to_rgb([lab.l[i], lab.a[i], lab.b[i]]));
    }
    Image::new(lab.width, lab.height, 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(r: f32, g: f32, b: f32) -> ImageF32 {
        Image::new(1, 1, 3, vec![r, g, b]).unwrap()
    }

    #[test]
    fn gray_weights() {
        assert_eq!(rgb_to_gray(&px(0.0, 0.0, 0.0)).unwrap().data(), &[0.0]);
        assert!((rgb_to_gray(&px(1.0, 1.0, 1.0)).unwrap().data()[0] - 1.0).abs() < 1e-6);
        assert!((rgb_to_gray(&px(1.0, 0.0, 0.0)).unwrap().data()[0] - 0.299).abs() < 1e-7);
    }

    #[test]
    fn gray_rejects_gray_input() {
        let g = Image::new(1, 1, 1, vec![0.5f32]).unwrap();
        let err = rgb_to_gray(&g).unwrap_err();
        assert!(err.to_string().contains("already grayscale"));
    }

    #[test]
    fn lab_anchors() {
        let black = rgb_to_lab(&px(0.0, 0.0, 0.0)).unwrap();
        assert!(black.l[0].abs() < 1e-6);
        let white = rgb_to_lab(&px(1.0, 1.0, 1.0)).unwrap();
        assert!((white.l[0] - 100.0).abs() < 1e-4);
        assert!(white.a[0].abs() < 0.01 && white.b[0].abs() < 0.01);
    }

    #[test]
    fn lab_round_trip_grid() {
        let steps = 16;
        let mut data = Vec::new();
        for r in 0..steps {
            for g in 0..steps {
                for b in 0..steps {
                    let s = (steps - 1) as f32;
                    data.extend([r as f32 / s, g as f32 / s, b as f32 / s]);
                }
            }
        }
        let img = Image::new(steps * steps, steps, 3, data).unwrap();
        let back = lab_to_rgb(&rgb_to_lab(&img).unwrap()).unwrap();
        let worst = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-3, "worst round-trip error {worst}");
    }

    #[test]
    fn lab_round_trip_sample() {
        let img = px(0.2, 0.5, 0.8);
        let back = lab_to_rgb(&rgb_to_lab(&img).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-3);
        }
    }
}
