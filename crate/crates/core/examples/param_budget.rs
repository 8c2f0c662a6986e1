//! Parameter counts of the three presets and the size of their fp16 checkpoints.
//!
//!     cargo run --release --example param_budget -- [--layers]

use llie::unet::{checkpoint_bytes, DType, DwUNet, Metadata, ModelConfig};

fn main() -> llie::Result<()> {
    let show_layers = std::env::args().any(|a| a == "--layers");
    println!("{:<6} {:>4} {:>3} {:>10} {:>12}", "preset", "f1", "N", "params", "fp16 bytes");
    for name in ["tiny", "mid", "large"] {
        let cfg = ModelConfig::from_preset(name)?;
        let model = DwUNet::build(cfg, 0)?;
        let table = model.count_params();
        let bytes = checkpoint_bytes(&model, DType::F16, &Metadata::new())?.len();
        println!("{name:<6} {:>4} {:>3} {:>10} {bytes:>12}", cfg.f1, cfg.n_blocks, table.total);
        if show_layers {
            println!("{table}\n");
        }
    }
    Ok(())
}
