//! Trains with an extra loss term through the perceptual-loss hook. Here the
//! term is a cheap gradient-matching loss; an LPIPS network would plug in the
//! same way. Lambda defaults to 1 when a plugin is given.
//!
//!     cargo run --release --example custom_loss -- [epochs] [lambda]

use llie::tensor::{Graph, Var};
use llie::train::{synthetic_pairs, train, PerceptualLoss, TrainConfig};
use llie::unet::{DwUNet, ModelConfig};

/// Mean absolute difference of horizontal image gradients.
struct EdgeLoss;

impl EdgeLoss {
    fn dx(g: &mut Graph, x: Var) -> llie::Result<Var> {
        let [_, _, h, w] = <[usize; 4]>::try_from(g.dims(x)).expect("4-d tensor");
        let right = g.crop(x, 0, 1, h, w - 1)?;
        let left = g.crop(x, 0, 0, h, w - 1)?;
        let neg = g.mul_scalar(left, -1.0)?;
        g.add(right, neg)
    }
}

impl PerceptualLoss for EdgeLoss {
    fn name(&self) -> &str {
        "edge"
    }

    fn loss(&self, g: &mut Graph, pred: Var, gt: Var) -> llie::Result<Var> {
        let a = Self::dx(g, pred)?;
        let b = Self::dx(g, gt)?;
        g.l1_loss(a, b)
    }
}

fn main() -> llie::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs = args.first().map_or(40, |s| s.parse().expect("epochs"));
    let lambda: Option<f32> = args.get(1).map(|s| s.parse().expect("lambda"));
    let data = synthetic_pairs(4, 48, 2)?;
    let cfg = TrainConfig {
        epochs,
        lr_max: 2e-3,
        batch_size: 4,
        crop: 48,
        lambda_perceptual: lambda,
        ..Default::default()
    };
    println!("lambda = {}", cfg.lambda(true));
    let model = DwUNet::build(ModelConfig::tiny(), 0)?;
    let out = train(&cfg, &data, model, Some(&EdgeLoss))?;
    for e in out.log.iter().step_by(5.max(epochs / 10)) {
        println!("epoch {:>3}  loss {:.5}  lr {:.2e}", e.epoch, e.loss, e.lr);
    }
    Ok(())
}
