//! Compares reverse-mode gradients with central finite differences for a
//! small depthwise block: conv, GroupNorm, GELU, residual add, L1 loss.
//!
//!     cargo run --release --example gradcheck

use llie::tensor::{Conv2dParams, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};

fn block(g: &mut Graph, v: &[Var]) -> llie::Result<Var> {
    let (x, w, gain, bias) = (v[0], v[1], v[2], v[3]);
    let y = g.conv2d(x, w, None, Conv2dParams::depthwise3x3(4))?;
    let y = g.group_norm(y, 2, gain, bias, 1e-5)?;
    let y = g.gelu(y)?;
    g.add(x, y)
}

/// L1 loss against `target`, accumulated in f64 so the finite differences
/// are not swamped by f32 rounding.
fn loss_at(inputs: &[Tensor], target: &Tensor) -> f64 {
    let mut g = Graph::no_grad();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = block(&mut g, &vars).unwrap();
    let y = g.value(out).data();
    y.iter().zip(target.data()).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / y.len() as f64
}

fn main() -> llie::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut random = |dims: &[usize], lo: f32, hi: f32| {
        let n = dims.iter().product();
        Tensor::from_vec(dims.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
    };
    let inputs = vec![
        random(&[1, 4, 6, 6], -1.0, 1.0)?,
        random(&[4, 1, 3, 3], -0.5, 0.5)?,
        random(&[4], 0.5, 1.5)?,
        random(&[4], -0.2, 0.2)?,
    ];
    // Far from every output so the L1 kink is never crossed.
    let target = random(&[1, 4, 6, 6], 5.0, 6.0)?;
    let names = ["input", "dw weight", "norm gain", "norm bias"];

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let y = block(&mut g, &vars)?;
    let t = g.constant(target.clone());
    let loss = g.l1_loss(y, t)?;
    g.backward(loss)?;

    let eps = 1e-3f32;
    for (k, name) in names.iter().enumerate() {
        let analytic = g.grad(vars[k]).expect("parameter gradient").to_vec();
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        let mut work = inputs.clone();
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let plus = loss_at(&work, &target);
            work[k].data_mut()[i] = orig - eps;
            let minus = loss_at(&work, &target);
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps as f64);
            diff += (analytic[i] as f64 - numeric).powi(2);
            norm += numeric.powi(2);
        }
        println!("{name:<10} relative error {:.2e}", diff.sqrt() / norm.sqrt().max(1e-12));
    }
    Ok(())
}
