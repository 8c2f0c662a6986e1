//! Full-reference quality metrics: PSNR and SSIM on 8-bit images.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{read_png, ImageU8};
use crate::stats::list_pngs;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn check_same_dims(a: &ImageU8, b: &ImageU8) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "image dimensions differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if a.num_pixels() == 0 {
        return Err(Error::Shape("empty image".into()));
    }
    Ok(())
}

/// PSNR in dB over all channels with peak 255. Identical images give `+inf`.
pub fn psnr(pred: &ImageU8, gt: &ImageU8) -> Result<f64> {
    check_same_dims(pred, gt)?;
    let sse: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / pred.data().len() as f64;
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SsimMode {
    /// SSIM of the Rec. 601 luma planes (unrounded).
    #[default]
    Luma,
    /// Mean of the per-channel SSIMs.
    ChannelMean,
}

/// Normalized 1-D Gaussian taps; their outer product is the 2-D window.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// The 11×11 window, row-major, summing to 1.
pub fn gaussian_window() -> Vec<f64> {
    let t = gaussian_taps();
    t.iter().flat_map(|&a| t.iter().map(move |&b| a * b)).collect()
}

/// Valid-region separable filtering of a `w × h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (wo, ho) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; wo * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..wo {
            rows[y * wo + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; wo * ho];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..k).map(|i| taps[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let taps = gaussian_taps();
    let mu_a = filter_valid(a, w, h, &taps);
    let mu_b = filter_valid(b, w, h, &taps);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let e_aa = filter_valid(&prod(a, a), w, h, &taps);
    let e_bb = filter_valid(&prod(b, b), w, h, &taps);
    let e_ab = filter_valid(&prod(a, b), w, h, &taps);
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + C1) * (2.0 * cov + C2);
        let den = (ma * ma + mb * mb + C1) * (va + vb + C2);
        sum += num / den;
    }
    sum / mu_a.len() as f64
}

fn luma_plane(img: &ImageU8) -> Vec<f64> {
    if img.channels() == 1 {
        return img.data().iter().map(|&v| v as f64).collect();
    }
    img.pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

fn channel_plane(img: &ImageU8, c: usize) -> Vec<f64> {
    img.pixels().map(|p| p[c] as f64).collect()
}

pub fn ssim(pred: &ImageU8, gt: &ImageU8) -> Result<f64> {
    ssim_with(pred, gt, SsimMode::Luma)
}

pub fn ssim_with(pred: &ImageU8, gt: &ImageU8, mode: SsimMode) -> Result<f64> {
    check_same_dims(pred, gt)?;
    let (w, h, c) = pred.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    Ok(match mode {
        SsimMode::Luma => ssim_plane(&luma_plane(pred), &luma_plane(gt), w, h),
        SsimMode::ChannelMean => {
            let total: f64 = (0..c)
                .map(|ch| ssim_plane(&channel_plane(pred, ch), &channel_plane(gt, ch), w, h))
                .sum();
            total / c as f64
        }
    })
}

/// Extra per-image score reported next to PSNR and SSIM.
pub trait ImageMetric {
    fn name(&self) -> &str;
    fn score(&self, pred: &ImageU8, gt: &ImageU8) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub filename: String,
    pub psnr: f64,
    pub ssim: f64,
    pub extra: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub extra_columns: Vec<String>,
    pub rows: Vec<MetricRow>,
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl MetricReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("filename,psnr,ssim");
        for col in &self.extra_columns {
            out.push(',');
            out.push_str(col);
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{:.6}", r.filename, fmt_psnr(r.psnr), r.ssim);
            for v in &r.extra {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        let _ = write!(out, "MEAN,{},{:.6}", fmt_psnr(self.mean_psnr()), self.mean_ssim());
        for i in 0..self.extra_columns.len() {
            let _ = write!(out, ",{:.6}", mean(self.rows.iter().map(|r| r.extra[i])));
        }
        out.push('\n');
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn file_names(folder: &Path) -> Result<BTreeSet<String>> {
    Ok(list_pngs(folder)?
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect())
}

pub fn evaluate_folder(pred: impl AsRef<Path>, gt: impl AsRef<Path>) -> Result<MetricReport> {
    evaluate_folder_with(pred, gt, SsimMode::Luma, &[])
}

/// Scores every PNG in `pred` against the same-named file in `gt`.
/// A file present in only one of the folders is an error.
pub fn evaluate_folder_with(
    pred: impl AsRef<Path>,
    gt: impl AsRef<Path>,
    mode: SsimMode,
    plugins: &[&dyn ImageMetric],
) -> Result<MetricReport> {
    let (pred, gt) = (pred.as_ref(), gt.as_ref());
    let pred_names = file_names(pred)?;
    let gt_names = file_names(gt)?;
    if let Some(name) = pred_names.symmetric_difference(&gt_names).next() {
        let (missing_in, present_in) = if pred_names.contains(name) { (gt, pred) } else { (pred, gt) };
        return Err(Error::Data(format!(
            "{name}: present in {} but missing from {}",
            present_in.display(),
            missing_in.display()
        )));
    }
    if pred_names.is_empty() {
        return Err(Error::Data(format!("{}: no PNG files found", pred.display())));
    }
    let mut report = MetricReport {
        extra_columns: plugins.iter().map(|p| p.name().to_string()).collect(),
        rows: Vec::new(),
    };
    for name in pred_names {
        let p = read_png(pred.join(&name))?;
        let g = read_png(gt.join(&name))?;
        let at = |e: Error| e.at(pred.join(&name));
        let extra = plugins
            .iter()
            .map(|m| m.score(&p, &g))
            .collect::<Result<Vec<_>>>()
            .map_err(at)?;
        report.rows.push(MetricRow {
            psnr: psnr(&p, &g).map_err(at)?,
            ssim: ssim_with(&p, &g, mode).map_err(at)?,
            filename: name,
            extra,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> ImageU8 {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        ImageU8::new(w, h, 1, data).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = ImageU8::filled(8, 8, 3, 100).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = ImageU8::filled(8, 8, 3, 101).unwrap();
        // MSE 1 -> 20 log10(255)
        assert!((psnr(&a, &b).unwrap() - 48.130_803_608_679_1).abs() < 1e-9);
        let zero = ImageU8::filled(4, 4, 1, 0).unwrap();
        let full = ImageU8::filled(4, 4, 1, 255).unwrap();
        assert_eq!(psnr(&zero, &full).unwrap(), 0.0);
    }

    #[test]
    fn window_sums_to_one() {
        let s: f64 = gaussian_window().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let w = gaussian_window();
        assert!(w[5 * 11 + 5] > w[0]);
    }

    #[test]
    fn ssim_self_is_one() {
        let img = gray(32, 20, |x, y| ((x * 7 + y * 13) % 256) as u8);
        assert_eq!(ssim(&img, &img).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constant_images() {
        // Zero variance: the score depends only on the means.
        let a = ImageU8::filled(16, 16, 1, 0).unwrap();
        let b = ImageU8::filled(16, 16, 1, 255).unwrap();
        let expected = C1 / (255.0 * 255.0 + C1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_and_mismatched() {
        let small = ImageU8::filled(10, 20, 1, 0).unwrap();
        assert!(ssim(&small, &small).is_err());
        let a = ImageU8::filled(16, 16, 1, 0).unwrap();
        let b = ImageU8::filled(16, 17, 1, 0).unwrap();
        assert!(ssim(&a, &b).is_err());
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn report_csv() {
        let report = MetricReport {
            extra_columns: vec![],
            rows: vec![
                MetricRow { filename: "a.png".into(), psnr: 30.0, ssim: 0.5, extra: vec![] },
                MetricRow { filename: "b.png".into(), psnr: 40.0, ssim: 0.7, extra: vec![] },
            ],
        };
        assert_eq!(
            report.to_csv(),
            "filename,psnr,ssim\na.png,30.0000,0.500000\nb.png,40.0000,0.700000\nMEAN,35.0000,0.600000\n"
        );
    }
}
