//! Renders every preprocessor on one dark image and assembles the
//! nine-channel network input.
//!
//!     cargo run --release --example preprocess_views -- [input.png] [out_dir]

use llie::image::{read_png, to_f32, to_u8, write_png};
use llie::preproc::{assemble_nine_channel, Preprocessor, PreprocessorKind};
use llie::stats::image_stats;
use llie::train::synthetic_pairs;

fn main() -> llie::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let low = match args.first() {
        Some(path) => read_png(path)?,
        None => synthetic_pairs(1, 128, 3)?.get(0).low.clone(),
    };
    let out_dir = std::path::PathBuf::from(args.get(1).map_or("preprocess_views", String::as_str));
    std::fs::create_dir_all(&out_dir).map_err(|e| llie::Error::io(&out_dir, e))?;

    let img = to_f32(&low);
    let s = image_stats(&low)?;
    println!("{:<14} mean {:6.1}  std {:5.1}", "original", s.mu, s.sigma);
    for spec in ["gamma:0.5", "he", "he:channel", "clahe:2:8", "clahe:inf:1"] {
        let pre = Preprocessor::new(&spec.parse::<PreprocessorKind>()?)?;
        let view = to_u8(&pre.apply(&img)?);
        let s = image_stats(&view)?;
        println!("{spec:<14} mean {:6.1}  std {:5.1}", s.mu, s.sigma);
        write_png(out_dir.join(format!("{}.png", spec.replace(':', "_"))), &view)?;
    }

    // Default pair: gamma 0.5 in the first slot, CLAHE in the third.
    let first = Preprocessor::new(&PreprocessorKind::default_first())?;
    let second = Preprocessor::new(&PreprocessorKind::default_second())?;
    let nine = assemble_nine_channel(&img, &first, &second)?;
    println!("network input: {:?}", nine.to_tensor().dims());
    println!("views written to {}", out_dir.display());
    Ok(())
}
