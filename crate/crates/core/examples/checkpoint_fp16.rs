//! Saves a model in f32 and f16, reloads both and compares their outputs.
//!
//!     cargo run --release --example checkpoint_fp16 -- [out_dir]

use llie::preproc::{assemble_nine_channel, Preprocessor, PreprocessorKind};
use llie::image::to_f32;
use llie::train::synthetic_pairs;
use llie::unet::{load_checkpoint, save_checkpoint, DType, DwUNet, Metadata, ModelConfig};
use rand::{Rng, SeedableRng};

fn main() -> llie::Result<()> {
    let dir = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "checkpoints".into()));
    std::fs::create_dir_all(&dir).map_err(|e| llie::Error::io(&dir, e))?;

    // Nudge the zero head so the comparison is not trivially exact.
    let mut model = DwUNet::build(ModelConfig::tiny(), 1)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for v in model.param_mut("head.weight").expect("head").data_mut() {
        *v = rng.random_range(-0.02..0.02);
    }

    let mut meta = Metadata::new();
    meta.insert("preproc1".into(), PreprocessorKind::default_first().to_string());
    meta.insert("preproc2".into(), PreprocessorKind::default_second().to_string());

    let low = to_f32(&synthetic_pairs(1, 64, 2)?.get(0).low);
    let input = assemble_nine_channel(
        &low,
        &Preprocessor::new(&PreprocessorKind::default_first())?,
        &Preprocessor::new(&PreprocessorKind::default_second())?,
    )?;
    let reference = model.enhance(&input)?;

    for (dtype, file) in [(DType::F32, "tiny_f32.dwun"), (DType::F16, "tiny_f16.dwun")] {
        let path = dir.join(file);
        save_checkpoint(&model, &path, dtype, &meta)?;
        let size = std::fs::metadata(&path).map_err(|e| llie::Error::io(&path, e))?.len();
        let loaded = load_checkpoint(&path)?;
        let out = loaded.model.enhance(&input)?;
        let worst = out
            .data()
            .iter()
            .zip(reference.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        println!("{file:<14} {size:>9} bytes  max output change {worst:.2e}  preproc1 {}", loaded.metadata["preproc1"]);
    }
    Ok(())
}
