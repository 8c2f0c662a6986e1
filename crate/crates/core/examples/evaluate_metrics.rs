//! PSNR and SSIM of predictions against ground truth, with an extra
//! user-defined metric column.
//!
//!     cargo run --release --example evaluate_metrics -- [pred_dir gt_dir]

use llie::image::{write_png, ImageU8};
use llie::metrics::{evaluate_folder_with, ImageMetric, SsimMode};
use llie::train::synthetic_pairs;

/// Mean absolute byte error.
struct Mae;

impl ImageMetric for Mae {
    fn name(&self) -> &str {
        "mae"
    }

    fn score(&self, pred: &ImageU8, gt: &ImageU8) -> llie::Result<f64> {
        let sum: f64 = pred.data().iter().zip(gt.data()).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum();
        Ok(sum / pred.data().len() as f64)
    }
}

fn main() -> llie::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (pred, gt, _keep) = if let [pred, gt] = args.as_slice() {
        (pred.into(), gt.into(), None)
    } else {
        // Ground truth against a brightened copy of the low image.
        let tmp = tempfile::tempdir().map_err(|e| llie::Error::io("tempdir", e))?;
        let (pred, gt) = (tmp.path().join("pred"), tmp.path().join("gt"));
        for d in [&pred, &gt] {
            std::fs::create_dir_all(d).map_err(|e| llie::Error::io(d, e))?;
        }
        for pair in synthetic_pairs(3, 64, 8)?.pairs() {
            let guess = pair.low.map(|v| (v as u32 * 3).min(255) as u8);
            write_png(pred.join(&pair.name), &guess)?;
            write_png(gt.join(&pair.name), &pair.gt)?;
        }
        (pred, gt, Some(tmp))
    };
    let report = evaluate_folder_with(&pred, &gt, SsimMode::Luma, &[&Mae])?;
    print!("{}", report.to_csv());
    let channel = evaluate_folder_with(&pred, &gt, SsimMode::ChannelMean, &[])?;
    println!("per-channel SSIM mean: {:.6}", channel.mean_ssim());
    Ok(())
}
