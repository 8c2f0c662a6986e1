//! Enhances one image with a trained checkpoint, using the preprocessors
//! recorded in it.
//!
//!     cargo run --release --example enhance_image -- model.dwun low.png out.png
//!
//! Without arguments a small model is trained for a few epochs on synthetic
//! pairs first, so the example runs end to end.

use llie::image::{read_png, to_f32, to_u8, write_png};
use llie::metrics::psnr;
use llie::preproc::{assemble_nine_channel, Preprocessor, PreprocessorKind, ResidualSource};
use llie::train::{synthetic_pairs, train, TrainConfig};
use llie::unet::{load_checkpoint, DwUNet, ModelConfig};

fn main() -> llie::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();

    let (model, meta, low, gt, out) = if let [ckpt, input, out] = args.as_slice() {
        let loaded = load_checkpoint(ckpt)?;
        (loaded.model, loaded.metadata, read_png(input)?, None, out.clone())
    } else {
        let data = synthetic_pairs(4, 48, 21)?;
        let cfg = TrainConfig {
            epochs: 40,
            lr_max: 2e-3,
            batch_size: 4,
            crop: 48,
            seed: 3,
            ..Default::default()
        };
        let model = DwUNet::build(ModelConfig::tiny(), cfg.seed)?;
        let trained = train(&cfg, &data, model, None)?;
        let pair = data.get(0).clone();
        (trained.model, cfg.checkpoint_metadata(), pair.low, Some(pair.gt), "enhanced.png".to_string())
    };

    let kind = |key: &str| -> llie::Result<PreprocessorKind> {
        meta.get(key)
            .ok_or_else(|| llie::Error::Config(format!("checkpoint does not record {key}")))?
            .parse()
    };
    let first = Preprocessor::new(&kind("preproc1")?)?;
    let second = Preprocessor::new(&kind("preproc2")?)?;
    let mut input = assemble_nine_channel(&to_f32(&low), &first, &second)?;
    input.residual_source = meta.get("residual").map_or(Ok(ResidualSource::First), |r| r.parse())?;

    let enhanced = to_u8(&model.enhance(&input)?);
    write_png(&out, &enhanced)?;
    println!("wrote {out}");
    if let Some(gt) = gt {
        println!("low PSNR {:.2} dB -> enhanced PSNR {:.2} dB", psnr(&low, &gt)?, psnr(&enhanced, &gt)?);
    }
    Ok(())
}
