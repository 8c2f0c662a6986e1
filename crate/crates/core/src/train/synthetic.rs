//! Small synthetic paired sets for smoke tests and examples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{Pair, PairedDataset};
use crate::error::Result;
use crate::image::{quantize, ImageU8};

/// Smooth colored scene: a tilted gradient plus a few soft blobs.
fn scene(size: usize, rng: &mut ChaCha8Rng) -> Vec<[f32; 3]> {
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.6));
    let slope: [(f32, f32); 3] = std::array::from_fn(|_| (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)));
    let blobs: Vec<(f32, f32, f32, [f32; 3])> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.08..0.25),
                std::array::from_fn(|_| rng.random_range(-0.3..0.35)),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f32 / size as f32, y as f32 / size as f32);
            let mut px: [f32; 3] = std::array::from_fn(|c| base[c] + slope[c].0 * (u - 0.5) + slope[c].1 * (v - 0.5));
            for &(bx, by, r, amp) in &blobs {
                let d2 = (u - bx).powi(2) + (v - by).powi(2);
                let wgt = (-d2 / (2.0 * r * r)).exp();
                for c in 0..3 {
                    px[c] += amp[c] * wgt;
                }
            }
            out.push(px.map(|p| p.clamp(0.03, 0.97)));
        }
    }
    out
}

/// `n` pairs of `size`×`size` images. The low image is a darkened, gamma-bent,
/// color-cast copy of the ground truth: `low = k_c * gt^1.8` with `k ≈ 0.25`.
pub fn synthetic_pairs(n: usize, size: usize, seed: u64) -> Result<PairedDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cast = [0.22f32, 0.25, 0.3];
    let pairs = (0..n)
        .map(|i| {
            let gt = scene(size, &mut rng);
            let gt_bytes: Vec<u8> = gt.iter().flat_map(|p| p.map(quantize)).collect();
            let low_bytes: Vec<u8> = gt
                .iter()
                .flat_map(|p| std::array::from_fn::<u8, 3, _>(|c| quantize(cast[c] * p[c].powf(1.8))))
                .collect();
            Ok(Pair {
                name: format!("synthetic_{i:03}.png"),
                low: ImageU8::new(size, size, 3, low_bytes)?,
                gt: ImageU8::new(size, size, 3, gt_bytes)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PairedDataset::from_pairs(pairs)
}
