//! Histogram equalization and CLAHE.

use crate::error::{Error, Result};
use crate::image::color::luma;
use crate::image::{lab_to_rgb, quantize, rgb_to_lab, ImageF32};

pub const BINS: usize = 256;

/// How global histogram equalization treats color.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum HistEqMode {
    /// Equalize luma and scale RGB by the per-pixel luma gain (hue-preserving).
    #[default]
    Luma,
    /// Equalize each channel independently.
    PerChannel,
}

/// Normalized-CDF remap `(cdf(v) - cdf_min) / (n - cdf_min) * 255`.
///
/// `cdf_min` is the cumulative count at the first occupied bin. Returns `None`
/// when the histogram has fewer than two occupied bins.
pub(crate) fn equalization_lut(hist: &[f64; BINS]) -> Option<[f64; BINS]> {
    let occupied = hist.iter().filter(|&&c| c > 0.0).count();
    if occupied < 2 {
        return None;
    }
    let total: f64 = hist.iter().sum();
    let first = hist.iter().position(|&c| c > 0.0)?;
    let mut lut = [0.0; BINS];
    let mut cdf = 0.0;
    let mut cdf_min = 0.0;
    for (i, &c) in hist.iter().enumerate() {
        cdf += c;
        if i == first {
            cdf_min = cdf;
        }
        lut[i] = if i < first {
            0.0
        } else {
            (cdf - cdf_min) / (total - cdf_min) * 255.0
        };
    }
    Some(lut)
}

fn byte_histogram(values: impl Iterator<Item = u8>) -> [f64; BINS] {
    let mut counts = [0u32; BINS];
    for v in values {
        counts[v as usize] += 1;
    }
    counts.map(|c| c as f64)
}

pub fn apply_hist_eq(img: &ImageF32) -> Result<ImageF32> {
    apply_hist_eq_with(img, HistEqMode::Luma)
}

pub fn apply_hist_eq_with(img: &ImageF32, mode: HistEqMode) -> Result<ImageF32> {
    match (mode, img.channels()) {
        (HistEqMode::PerChannel, _) | (_, 1) => Ok(equalize_channels(img)),
        (HistEqMode::Luma, _) => Ok(equalize_luma(img)),
    }
}

fn equalize_channels(img: &ImageF32) -> ImageF32 {
    let c = img.channels();
    let mut out = img.clone();
    for ch in 0..c {
        let hist = byte_histogram(img.data().iter().skip(ch).step_by(c).map(|&v| quantize(v)));
        let Some(lut) = equalization_lut(&hist) else {
            continue;
        };
        for v in out.data_mut().iter_mut().skip(ch).step_by(c) {
            *v = lut[quantize(*v) as usize].round() as f32 / 255.0;
        }
    }
    out
}

fn equalize_luma(img: &ImageF32) -> ImageF32 {
    let lumas: Vec<f32> = img.pixels().map(|p| luma(p[0], p[1], p[2])).collect();
    let hist = byte_histogram(lumas.iter().map(|&l| quantize(l)));
    let Some(lut) = equalization_lut(&hist) else {
        return img.clone();
    };
    let mut out = img.clone();
    for (px, &l) in out.data_mut().chunks_exact_mut(3).zip(&lumas) {
        if l <= 0.0 {
            continue;
        }
        let target = lut[quantize(l) as usize].round() as f32 / 255.0;
        let gain = target / l;
        for v in px {
            *v = (*v * gain).clamp(0.0, 1.0);
        }
    }
    out
}

/// Clip limit value meaning "never clip".
pub const UNBOUNDED_CLIP: f32 = f32::INFINITY;

/// Piecewise-linear evaluation of a 256-entry LUT at a continuous level in [0, 255].
#[inline]
fn eval_lut(lut: &[f64; BINS], level: f32) -> f64 {
    let i = (level.max(0.0) as usize).min(BINS - 1);
    let frac = (level as f64 - i as f64).clamp(0.0, 1.0);
    if i + 1 < BINS {
        lut[i] + frac * (lut[i + 1] - lut[i])
    } else {
        lut[i]
    }
}

fn identity_lut() -> [f64; BINS] {
    std::array::from_fn(|i| i as f64)
}

fn lightness_levels(l: &[f32]) -> Vec<f32> {
    l.iter().map(|&v| (v / 100.0 * 255.0).clamp(0.0, 255.0)).collect()
}

#[inline]
fn level_bin(level: f32) -> usize {
    (level as usize).min(BINS - 1)
}

/// Global histogram equalization of the CIE Lab L channel.
pub fn equalize_lightness(img: &ImageF32) -> Result<ImageF32> {
    let mut lab = rgb_to_lab(img)?;
    let levels = lightness_levels(&lab.l);
    let mut counts = [0u32; BINS];
    for &lv in &levels {
        counts[level_bin(lv)] += 1;
    }
    let lut = equalization_lut(&counts.map(|c| c as f64)).unwrap_or_else(identity_lut);
    for (l, &lv) in lab.l.iter_mut().zip(&levels) {
        *l = (eval_lut(&lut, lv) * 100.0 / 255.0) as f32;
    }
    lab_to_rgb(&lab)
}

/// Contrast-limited adaptive histogram equalization on the Lab L channel.
///
/// The image is split into a `tiles`×`tiles` grid of ceil-divided regions.
/// Each tile histogram over 256 L levels is clipped at
/// `clip_limit * tile_pixels / 256`, the clipped excess is spread uniformly
/// over all bins in a single pass, and the normalized CDF gives the tile
/// mapping. Tiles whose raw histogram occupies a single bin map to identity.
/// Pixels blend the four nearest tile mappings bilinearly.
pub fn apply_clahe(img: &ImageF32, clip_limit: f32, tiles: usize) -> Result<ImageF32> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!(
            "clahe expects 3 channels, got {}",
            img.channels()
        )));
    }
    if img.width() < 2 || img.height() < 2 {
        return Err(Error::Shape(format!(
            "clahe needs an image of at least 2x2, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    if tiles < 1 || clip_limit.is_nan() || clip_limit < 1.0 {
        return Err(Error::Config(format!(
            "clahe needs clip_limit >= 1 and tiles >= 1, got {clip_limit} and {tiles}"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let tile_w = w.div_ceil(tiles);
    let tile_h = h.div_ceil(tiles);
    let grid_x = w.div_ceil(tile_w);
    let grid_y = h.div_ceil(tile_h);

    let mut lab = rgb_to_lab(img)?;
    let levels = lightness_levels(&lab.l);

    let mut luts = Vec::with_capacity(grid_x * grid_y);
    for ty in 0..grid_y {
        for tx in 0..grid_x {
            let (x0, y0) = (tx * tile_w, ty * tile_h);
            let (x1, y1) = ((x0 + tile_w).min(w), (y0 + tile_h).min(h));
            let mut counts = [0u32; BINS];
            for y in y0..y1 {
                for &lv in &levels[y * w + x0..y * w + x1] {
                    counts[level_bin(lv)] += 1;
                }
            }
            luts.push(tile_lut(&counts, clip_limit));
        }
    }

    for y in 0..h {
        let fy = (y as f32 + 0.5) / tile_h as f32 - 0.5;
        let (ty0, ty1, wy) = neighbours(fy, grid_y);
        for x in 0..w {
            let fx = (x as f32 + 0.5) / tile_w as f32 - 0.5;
            let (tx0, tx1, wx) = neighbours(fx, grid_x);
            let lv = levels[y * w + x];
            let m00 = eval_lut(&luts[ty0 * grid_x + tx0], lv);
            let m01 = eval_lut(&luts[ty0 * grid_x + tx1], lv);
            let m10 = eval_lut(&luts[ty1 * grid_x + tx0], lv);
            let m11 = eval_lut(&luts[ty1 * grid_x + tx1], lv);
            let top = m00 + wx * (m01 - m00);
            let bottom = m10 + wx * (m11 - m10);
            let mapped = top + wy * (bottom - top);
            lab.l[y * w + x] = (mapped * 100.0 / 255.0) as f32;
        }
    }
    lab_to_rgb(&lab)
}

fn neighbours(f: f32, n: usize) -> (usize, usize, f64) {
    let base = f.floor();
    let weight = (f - base) as f64;
    let clamp = |t: f32| (t.max(0.0) as usize).min(n - 1);
    (clamp(base), clamp(base + 1.0), weight)
}

fn tile_lut(counts: &[u32; BINS], clip_limit: f32) -> [f64; BINS] {
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return identity_lut();
    }
    let mut hist = counts.map(|c| c as f64);
    if clip_limit.is_finite() {
        let pixels: f64 = hist.iter().sum();
        let clip = clip_limit as f64 * pixels / BINS as f64;
        let mut excess = 0.0;
        for c in hist.iter_mut() {
            if *c > clip {
                excess += *c - clip;
                *c = clip;
            }
        }
        let share = excess / BINS as f64;
        for c in hist.iter_mut() {
            *c += share;
        }
    }
    equalization_lut(&hist).unwrap_or_else(identity_lut)
}

/// Gray RGB test image from byte levels.
#[cfg(test)]
pub(crate) fn gray_rgb(levels: &[u8], w: usize, h: usize) -> ImageF32 {
    let data = levels
        .iter()
        .flat_map(|&v| [v as f32 / 255.0; 3])
        .collect();
    ImageF32::new(w, h, 3, data).unwrap()
}
