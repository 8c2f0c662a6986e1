//! Inter- and intra-image brightness statistics of an image set.
//!
//! Per image: mean `mu` and population std `sigma` of the grayscale byte
//! values. Per set: the mean and population std of those, i.e.
//! `(mu_bar, sigma_inter, sigma_bar, sigma_intra)`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{read_png, to_f32, to_u8, ImageU8};
use crate::preproc::Preprocessor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageStats {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub mu_bar: f64,
    pub sigma_inter: f64,
    pub sigma_bar: f64,
    pub sigma_intra: f64,
    pub n_images: usize,
}

fn mean_and_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt(), n)
}

/// Grayscale byte value of each pixel (Rec. 601 luma, rounded) or the bytes
/// themselves for single-channel images.
pub fn gray_bytes(img: &ImageU8) -> Vec<u8> {
    if img.channels() == 1 {
        return img.data().to_vec();
    }
    img.pixels()
        .map(|p| {
            let l = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            l.round().clamp(0.0, 255.0) as u8
        })
        .collect()
}

pub fn image_stats(img: &ImageU8) -> Result<ImageStats> {
    if img.num_pixels() == 0 {
        return Err(Error::Data("image_stats: image has no pixels".into()));
    }
    let gray = gray_bytes(img);
    let (mu, sigma, _) = mean_and_std(gray.iter().map(|&v| v as f64));
    Ok(ImageStats { mu, sigma })
}

pub fn aggregate(stats: &[ImageStats]) -> Result<DatasetStats> {
    if stats.is_empty() {
        return Err(Error::Data("no images to aggregate".into()));
    }
    let (mu_bar, sigma_inter, n) = mean_and_std(stats.iter().map(|s| s.mu));
    let (sigma_bar, sigma_intra, _) = mean_and_std(stats.iter().map(|s| s.sigma));
    Ok(DatasetStats {
        mu_bar,
        sigma_inter,
        sigma_bar,
        sigma_intra,
        n_images: n,
    })
}

/// PNG files directly inside `folder`, sorted by file name.
pub fn list_pngs(folder: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let folder = folder.as_ref();
    let entries = std::fs::read_dir(folder).map_err(|e| Error::io(folder, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(folder, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Stats of one image after optional preprocessing and requantization to bytes.
pub fn preprocessed_stats(img: &ImageU8, preproc: Option<&Preprocessor>) -> Result<ImageStats> {
    match preproc {
        None => image_stats(img),
        Some(p) => image_stats(&to_u8(&p.apply(&to_f32(img))?)),
    }
}

/// Per-image stats for every PNG in `folder`, in file-name order.
pub fn folder_image_stats(
    folder: impl AsRef<Path>,
    preproc: Option<&Preprocessor>,
) -> Result<Vec<(String, ImageStats)>> {
    let folder = folder.as_ref();
    let files = list_pngs(folder)?;
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no PNG files found", folder.display())));
    }
    files
        .iter()
        .map(|path| {
            let img = read_png(path)?;
            let stats = preprocessed_stats(&img, preproc).map_err(|e| e.at(path))?;
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, stats))
        })
        .collect()
}

pub fn dataset_stats(folder: impl AsRef<Path>, preproc: Option<&Preprocessor>) -> Result<DatasetStats> {
    let per_image = folder_image_stats(folder, preproc)?;
    aggregate(&per_image.iter().map(|(_, s)| *s).collect::<Vec<_>>())
}

pub const DATASET_CSV_HEADER: &str = "variant,mu_bar,sigma_inter,sigma_bar,sigma_intra,n";

impl DatasetStats {
    pub fn csv_row(&self, variant: &str) -> String {
        format!(
            "{variant},{:.4},{:.4},{:.4},{:.4},{}",
            self.mu_bar, self.sigma_inter, self.sigma_bar, self.sigma_intra, self.n_images
        )
    }
}

pub fn per_image_csv(rows: &[(String, ImageStats)]) -> String {
    let mut out = String::from("filename,mu,sigma\n");
    for (name, s) in rows {
        let _ = writeln!(out, "{name},{:.4},{:.4}", s.mu, s.sigma);
    }
    out
}
