#![allow(dead_code)]

use llie::tensor::{Graph, Tensor, Var};
use llie::unet::{DwUNet, Mode, ModelConfig};
use llie::preproc::ResidualSource;
use llie::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform values in `[lo, hi)` that stay at least `gap` away from every kink.
pub fn random_avoiding(rng: &mut ChaCha8Rng, dims: &[usize], lo: f32, hi: f32, kinks: &[f32], gap: f32) -> Tensor {
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.random_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() > gap) {
                break v;
            }
        })
        .collect();
    Tensor::from_vec(dims.to_vec(), data).unwrap()
}

#[derive(Debug)]
pub struct GradCheck {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over the checked entries.
    pub rel_error: f64,
    pub checked: usize,
}

/// Central-difference check of `f` with respect to every input.
///
/// The scalar under test is `mean(r * f(inputs))` for a fixed random `r`, so
/// every output element contributes. At most `max_per_input` entries of each
/// input are perturbed.
pub fn gradcheck(
    inputs: &[Tensor],
    f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
    eps: f32,
    max_per_input: usize,
    seed: u64,
) -> GradCheck {
    let mut rng = rng(seed);
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let y = f(&mut g, &vars).unwrap();
    let dims = g.dims(y).to_vec();
    let weights = random_tensor(&mut rng, &dims, -1.0, 1.0);
    let r = g.constant(weights.clone());
    let prod = g.mul(y, r).unwrap();
    let loss = g.mean(prod).unwrap();
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f32>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let objective = |ins: &[Tensor]| -> f64 {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let y = f(&mut g, &vars).unwrap();
        let out = g.value(y).data();
        out.iter().zip(weights.data()).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / out.len() as f64
    };

    let (mut diff2, mut a2, mut n2, mut checked) = (0.0f64, 0.0f64, 0.0f64, 0);
    let mut work = inputs.to_vec();
    for k in 0..inputs.len() {
        let n = inputs[k].numel();
        let picks: Vec<usize> = if n <= max_per_input {
            (0..n).collect()
        } else {
            (0..max_per_input).map(|_| rng.random_range(0..n)).collect()
        };
        for i in picks {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let plus = objective(&work);
            work[k].data_mut()[i] = orig - eps;
            let minus = objective(&work);
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps as f64);
            let a = analytic[k][i] as f64;
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            checked += 1;
        }
    }
    let scale = a2.sqrt().max(n2.sqrt()).max(1e-12);
    GradCheck {
        rel_error: diff2.sqrt() / scale,
        checked,
    }
}

/// A small U-Net with every parameter (head included) randomized.
pub fn randomized_unet(config: ModelConfig, seed: u64) -> DwUNet {
    let mut model = DwUNet::build(config, seed).unwrap();
    let mut rng = rng(seed ^ 0x5eed);
    for p in model.params_mut() {
        for v in p.tensor.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    model
}

/// Gradcheck of the full network with respect to its input and a sample of parameters.
pub fn unet_gradcheck(seed: u64) -> GradCheck {
    let cfg = ModelConfig {
        f1: 4,
        n_blocks: 1,
        expansion: 2,
        ..ModelConfig::tiny()
    };
    let model = randomized_unet(cfg, seed);
    let mut rng = rng(seed);
    let x = random_tensor(&mut rng, &[1, 9, 10, 11], 0.0, 1.0);
    let mut inputs = vec![x];
    inputs.extend(model.params().iter().map(|p| p.tensor.clone()));
    let f = |g: &mut Graph, vars: &[Var]| model.forward_with(g, &vars[1..], vars[0], ResidualSource::First, Mode::Train);
    gradcheck(&inputs, &f, 1e-3, 3, seed)
}

pub type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub op: &'static str,
    pub shape: String,
    pub inputs: Vec<Tensor>,
    pub f: OpFn,
}

fn case(op: &'static str, inputs: Vec<Tensor>, f: OpFn) -> OpCase {
    OpCase {
        op,
        shape: format!("{:?}", inputs.iter().map(|t| t.dims().to_vec()).collect::<Vec<_>>()),
        inputs,
        f,
    }
}

const SHAPES: [[usize; 4]; 5] = [[1, 1, 1, 3], [1, 2, 3, 4], [2, 3, 2, 5], [1, 4, 5, 3], [3, 2, 4, 4]];

/// Every autograd op on at least five shapes.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    use llie::tensor::Conv2dParams;
    let mut rng = rng(seed);
    let mut cases = Vec::new();
    for d in SHAPES {
        let a = random_tensor(&mut rng, &d, -2.0, 2.0);
        let b = random_tensor(&mut rng, &d, -2.0, 2.0);
        cases.push(case("add", vec![a.clone(), b.clone()], Box::new(|g, v| g.add(v[0], v[1]))));
        cases.push(case("mul", vec![a.clone(), b.clone()], Box::new(|g, v| g.mul(v[0], v[1]))));
        cases.push(case("mul_scalar", vec![a.clone()], Box::new(|g, v| g.mul_scalar(v[0], -1.7))));
        cases.push(case("gelu", vec![a.clone()], Box::new(|g, v| g.gelu(v[0]))));
        cases.push(case("mean", vec![a.clone()], Box::new(|g, v| g.mean(v[0]))));
        let c = random_avoiding(&mut rng, &d, -0.5, 1.5, &[0.0, 1.0], 0.01);
        cases.push(case("clamp01", vec![c], Box::new(|g, v| g.clamp01(v[0]))));
        let t = random_tensor(&mut rng, &d, 0.0, 1.0);
        let mut p = t.clone();
        let off = random_avoiding(&mut rng, &d, -0.5, 0.5, &[0.0], 0.01);
        p.data_mut().iter_mut().zip(off.data()).for_each(|(x, o)| *x += o);
        cases.push(case("l1_loss", vec![p, t], Box::new(|g, v| g.l1_loss(v[0], v[1]))));

        let [n, c, h, w] = d;
        let x = random_tensor(&mut rng, &d, -1.0, 1.0);
        cases.push(case("upsample_bilinear2", vec![x.clone()], Box::new(|g, v| g.upsample_bilinear2(v[0]))));
        let extra = random_tensor(&mut rng, &[n, 2, h, w], -1.0, 1.0);
        cases.push(case(
            "concat_channels",
            vec![x.clone(), extra, x.clone()],
            Box::new(|g, v| g.concat_channels(&[v[0], v[1], v[2]])),
        ));
        let (start, len) = (c / 2, c - c / 2);
        cases.push(case("slice_channels", vec![x.clone()], Box::new(move |g, v| g.slice_channels(v[0], start, len))));
        let (ch, cw) = (h.div_ceil(2), w.div_ceil(2));
        cases.push(case("crop", vec![x.clone()], Box::new(move |g, v| g.crop(v[0], h - ch, w - cw, ch, cw))));
        let (pb, pr) = ((h - 1).min(2), (w - 1).min(3));
        cases.push(case("pad_reflect", vec![x], Box::new(move |g, v| g.pad_reflect(v[0], pb / 2, pb, pr, pr / 2))));
    }

    // (input dims, cout, k, stride, padding, groups, bias)
    let convs: [([usize; 4], usize, usize, usize, usize, usize, bool); 7] = [
        ([1, 3, 5, 6], 4, 3, 1, 1, 1, true),
        ([2, 4, 7, 5], 4, 3, 1, 1, 4, true),
        ([1, 2, 8, 8], 3, 3, 2, 1, 1, true),
        ([2, 6, 4, 5], 4, 1, 1, 0, 1, false),
        ([1, 4, 6, 7], 6, 3, 2, 0, 2, true),
        ([1, 3, 9, 9], 2, 5, 1, 2, 1, true),
        ([1, 8, 5, 4], 8, 3, 2, 1, 8, false),
    ];
    for (d, cout, k, stride, padding, groups, bias) in convs {
        let x = random_tensor(&mut rng, &d, -1.0, 1.0);
        let wt = random_tensor(&mut rng, &[cout, d[1] / groups, k, k], -0.5, 0.5);
        let params = Conv2dParams { stride, padding, groups };
        if bias {
            let b = random_tensor(&mut rng, &[cout], -0.5, 0.5);
            cases.push(case(
                "conv2d",
                vec![x, wt, b],
                Box::new(move |g, v| g.conv2d(v[0], v[1], Some(v[2]), params)),
            ));
        } else {
            cases.push(case("conv2d", vec![x, wt], Box::new(move |g, v| g.conv2d(v[0], v[1], None, params))));
        }
    }

    let norms: [([usize; 4], usize); 5] = [
        ([1, 4, 3, 3], 2),
        ([2, 6, 2, 5], 3),
        ([1, 8, 4, 4], 2),
        ([3, 4, 2, 2], 1),
        ([1, 6, 5, 3], 6),
    ];
    for (d, groups) in norms {
        let x = random_tensor(&mut rng, &d, -2.0, 2.0);
        let gain = random_tensor(&mut rng, &[d[1]], 0.5, 1.5);
        let b = random_tensor(&mut rng, &[d[1]], -0.5, 0.5);
        cases.push(case(
            "group_norm",
            vec![x, gain, b],
            Box::new(move |g, v| g.group_norm(v[0], groups, v[1], v[2], 1e-5)),
        ));
    }
    cases
}
