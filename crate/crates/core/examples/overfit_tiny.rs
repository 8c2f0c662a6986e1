//! Overfits the Tiny model on four synthetic 64×64 pairs and reports the fit.
//!
//!     cargo run --release --example overfit_tiny -- [epochs] [lr] [batch]

use llie::preproc::Preprocessor;
use llie::train::{evaluate_fit, synthetic_pairs, train, TrainConfig};
use llie::unet::{DwUNet, ModelConfig};

fn main() -> llie::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());

    let data = synthetic_pairs(4, 64, 11)?;
    let cfg = TrainConfig {
        epochs: arg(0, "100").parse().expect("epochs"),
        lr_max: arg(1, "2e-3").parse().expect("lr"),
        batch_size: arg(2, "4").parse().expect("batch"),
        warmup_epochs: 10,
        crop: 64,
        seed: 1,
        ..Default::default()
    };
    let model = DwUNet::build(ModelConfig::tiny(), cfg.seed)?;
    let first = Preprocessor::new(&cfg.preproc1)?;
    let second = Preprocessor::new(&cfg.preproc2)?;
    let before = evaluate_fit(&model, &data, &first, &second, cfg.residual)?;
    println!("before: L1 {:.4}  PSNR {:.2} dB", before.l1, before.psnr);

    let out = train(&cfg, &data, model, None)?;
    let after = evaluate_fit(&out.model, &data, &first, &second, cfg.residual)?;
    let last = out.log.last().map_or(f64::NAN, |e| e.loss);
    println!("after {} epochs: train loss {last:.4}  L1 {:.4}  PSNR {:.2} dB", cfg.epochs, after.l1, after.psnr);
    Ok(())
}
