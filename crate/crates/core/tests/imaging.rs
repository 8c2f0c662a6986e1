use llie::image::{decode_png, encode_png, rgb_to_gray, to_f32, to_u8, write_png, ImageF32, ImageU8};
use llie::metrics::{evaluate_folder, gaussian_window, psnr, ssim, ImageMetric, MetricReport};
use llie::preproc::{
    apply_clahe, apply_gamma, apply_hist_eq, apply_hist_eq_with, equalize_lightness, HistEqMode, Preprocessor, PreprocessorKind, UNBOUNDED_CLIP,
};
use llie::stats::{aggregate, dataset_stats, image_stats, preprocessed_stats, ImageStats};
use proptest::prelude::*;

fn rgb_bytes(max_side: usize) -> impl Strategy<Value = ImageU8> {
    (2..=max_side, 2..=max_side).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h * 3).prop_map(move |d| ImageU8::new(w, h, 3, d).unwrap())
    })
}

/// Dark-ish images with a narrow random range, closer to what the preprocessors see.
fn low_light(max_side: usize) -> impl Strategy<Value = ImageU8> {
    (2..=max_side, 2..=max_side, 0u8..60, 1u8..80).prop_flat_map(|(w, h, base, span)| {
        proptest::collection::vec(0..span, w * h * 3)
            .prop_map(move |d| ImageU8::new(w, h, 3, d.into_iter().map(|v| base + v).collect()).unwrap())
    })
}

fn max_abs_diff(a: &ImageF32, b: &ImageF32) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn constant(value: u8, side: usize) -> ImageU8 {
    ImageU8::filled(side, side, 3, value).unwrap()
}

#[test]
fn byte_float_round_trip_is_exact() {
    let all = ImageU8::new(256, 1, 1, (0..=255).collect()).unwrap();
    assert_eq!(to_u8(&to_f32(&all)), all);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn png_round_trip_is_bit_exact(img in rgb_bytes(24)) {
        let bytes = encode_png(&img).unwrap();
        prop_assert_eq!(decode_png(&bytes).unwrap(), img);
    }

    #[test]
    fn gray_commutes_with_pixel_permutation(img in rgb_bytes(12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let f = to_f32(&img);
        let mut order: Vec<usize> = (0..f.num_pixels()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<f32> = order.iter().flat_map(|&i| f.data()[3 * i..3 * i + 3].to_vec()).collect();
        let permuted = ImageF32::new(f.width(), f.height(), 3, permuted).unwrap();
        let g = rgb_to_gray(&f).unwrap();
        let gp = rgb_to_gray(&permuted).unwrap();
        for (k, &i) in order.iter().enumerate() {
            prop_assert_eq!(gp.data()[k], g.data()[i]);
        }
    }

    #[test]
    fn preprocessors_keep_dims_and_are_deterministic(img in low_light(20)) {
        let f = to_f32(&img);
        for spec in ["gamma:0.5", "gamma:2", "he", "he:channel", "clahe:2:8", "clahe:inf:1"] {
            let p = Preprocessor::new(&spec.parse::<PreprocessorKind>().unwrap()).unwrap();
            let a = p.apply(&f).unwrap();
            let b = p.apply(&f).unwrap();
            prop_assert_eq!(a.dims(), f.dims());
            prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{} not deterministic", spec);
        }
    }

    #[test]
    fn gamma_is_strictly_monotone(g in 0.05f32..4.0, a in 0u8..255) {
        let pair = to_f32(&ImageU8::new(2, 1, 1, vec![a, a + 1]).unwrap());
        let out = apply_gamma(&pair, g).unwrap();
        prop_assert!(out.data()[0] < out.data()[1]);
    }

    #[test]
    fn hist_eq_preserves_rank_order(img in low_light(16)) {
        // Neutral pixels in luma mode (no channel can saturate before another),
        // and every channel on its own in per-channel mode.
        let f = to_f32(&img);
        let gray = ImageF32::new(f.width(), f.height(), 3, f.pixels().flat_map(|p| [p[0]; 3]).collect()).unwrap();
        let luma = apply_hist_eq(&gray).unwrap();
        let per = apply_hist_eq_with(&f, HistEqMode::PerChannel).unwrap();
        for (before, after, c) in [(&gray, &luma, 0), (&f, &per, 0), (&f, &per, 1), (&f, &per, 2)] {
            let b: Vec<f32> = before.pixels().map(|p| p[c]).collect();
            let a: Vec<f32> = after.pixels().map(|p| p[c]).collect();
            for i in 0..b.len() {
                for j in 0..b.len() {
                    if b[i] < b[j] {
                        prop_assert!(a[i] <= a[j], "order broken: {} < {} but {} > {}", b[i], b[j], a[i], a[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn single_tile_unclipped_clahe_is_lightness_equalization(img in low_light(24)) {
        let f = to_f32(&img);
        let clahe = apply_clahe(&f, UNBOUNDED_CLIP, 1).unwrap();
        let he = equalize_lightness(&f).unwrap();
        prop_assert!(max_abs_diff(&clahe, &he) < 1e-3);
    }

    #[test]
    fn clahe_leaves_constant_images_alone(v in any::<u8>(), tiles in 1usize..5) {
        let img = constant(v, 16);
        let out = apply_clahe(&to_f32(&img), 2.0, tiles).unwrap();
        prop_assert!(max_abs_diff(&out, &to_f32(&img)) < 1e-3);
    }

    #[test]
    fn stats_permutation_and_duplication_invariant(imgs in proptest::collection::vec(low_light(8), 1..6)) {
        let stats: Vec<ImageStats> = imgs.iter().map(|i| image_stats(i).unwrap()).collect();
        let base = aggregate(&stats).unwrap();
        let mut rev = stats.clone();
        rev.reverse();
        let doubled: Vec<ImageStats> = stats.iter().chain(&stats).copied().collect();
        for other in [aggregate(&rev).unwrap(), aggregate(&doubled).unwrap()] {
            prop_assert!((other.mu_bar - base.mu_bar).abs() < 1e-9);
            prop_assert!((other.sigma_inter - base.sigma_inter).abs() < 1e-9);
            prop_assert!((other.sigma_bar - base.sigma_bar).abs() < 1e-9);
            prop_assert!((other.sigma_intra - base.sigma_intra).abs() < 1e-9);
        }
    }

    #[test]
    fn stats_stay_in_byte_range(img in rgb_bytes(12)) {
        for spec in [None, Some("gamma:0.5"), Some("he"), Some("clahe:2:4")] {
            let p = spec.map(|s| Preprocessor::new(&s.parse().unwrap()).unwrap());
            let s = preprocessed_stats(&img, p.as_ref()).unwrap();
            prop_assert!((0.0..=255.0).contains(&s.mu) && (0.0..=255.0).contains(&s.sigma));
        }
    }

    #[test]
    fn ssim_is_symmetric_and_flip_invariant(a in rgb_bytes(20).prop_filter("ssim window", |i| i.width() >= 11 && i.height() >= 11), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noisy: Vec<u8> = a.data().iter().map(|&v| v.saturating_add(rng.random_range(0..40))).collect();
        let b = ImageU8::new(a.width(), a.height(), 3, noisy).unwrap();
        let ab = ssim(&a, &b).unwrap();
        prop_assert_eq!(ab, ssim(&b, &a).unwrap());
        prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let flipped = ssim(&a.flip_horizontal(), &b.flip_horizontal()).unwrap();
        prop_assert!((flipped - ab).abs() < 1e-12, "{} vs {}", flipped, ab);
    }
}

#[test]
fn clahe_constant_image_bytes_unchanged() {
    for v in [0, 1, 37, 128, 254, 255] {
        let img = constant(v, 20);
        assert_eq!(to_u8(&apply_clahe(&to_f32(&img), 2.0, 8).unwrap()), img);
    }
}

#[test]
fn stats_match_hand_oracle() {
    // Single-channel images so the byte values are used directly.
    let images: Vec<Vec<u8>> = vec![
        vec![10, 20, 30, 40],
        vec![0, 0, 0, 0],
        vec![255, 0, 255, 0],
        vec![5, 5, 5, 17],
        vec![100, 101, 102, 103],
    ];
    let mut mus = Vec::new();
    let mut sigmas = Vec::new();
    for px in &images {
        let mu = px.iter().map(|&v| v as f64).sum::<f64>() / 4.0;
        let var = px.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / 4.0;
        mus.push(mu);
        sigmas.push(var.sqrt());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let std = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };

    let dir = tempfile::tempdir().unwrap();
    for (i, px) in images.iter().enumerate() {
        let img = ImageU8::new(2, 2, 1, px.clone()).unwrap();
        write_png(dir.path().join(format!("img{i}.png")), &img).unwrap();
    }
    let got = dataset_stats(dir.path(), None).unwrap();
    assert_eq!(got.n_images, 5);
    assert!((got.mu_bar - mean(&mus)).abs() < 1e-9);
    assert!((got.sigma_inter - std(&mus)).abs() < 1e-9);
    assert!((got.sigma_bar - mean(&sigmas)).abs() < 1e-9);
    assert!((got.sigma_intra - std(&sigmas)).abs() < 1e-9);
}

#[test]
fn ssim_of_constant_images() {
    let s = ssim(&constant(100, 16), &constant(50, 16)).unwrap();
    let c1 = (0.01f64 * 255.0).powi(2);
    assert!((s - (2.0 * 100.0 * 50.0 + c1) / (100.0f64.powi(2) + 50.0f64.powi(2) + c1)).abs() < 1e-9);
    assert!((s - 0.8001).abs() < 1e-4);
}

#[test]
fn gaussian_window_is_normalized() {
    assert!((gaussian_window().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn psnr_falls_as_noise_grows() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let base: Vec<u8> = (0..32 * 32 * 3).map(|_| rng.random_range(40..216)).collect();
    let gt = ImageU8::new(32, 32, 3, base.clone()).unwrap();
    let mut last = f64::INFINITY;
    for amp in [1i32, 4, 16] {
        let noisy: Vec<u8> = base.iter().map(|&v| (v as i32 + rng.random_range(-amp..=amp)) as u8).collect();
        let p = psnr(&ImageU8::new(32, 32, 3, noisy).unwrap(), &gt).unwrap();
        assert!(p < last, "amplitude {amp}: {p} dB not below {last} dB");
        last = p;
    }
}

struct MeanAbs;

impl ImageMetric for MeanAbs {
    fn name(&self) -> &str {
        "mae"
    }

    fn score(&self, pred: &ImageU8, gt: &ImageU8) -> llie::Result<f64> {
        let n = pred.data().len() as f64;
        Ok(pred.data().iter().zip(gt.data()).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / n)
    }
}

#[test]
fn folder_report_aggregates() {
    let (pred, gt) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let img = constant(90, 16);
    write_png(gt.path().join("a.png"), &img).unwrap();
    write_png(pred.path().join("a.png"), &img).unwrap();
    let same = evaluate_folder(pred.path(), gt.path()).unwrap();
    assert_eq!(same.mean_ssim(), 1.0);
    assert!(same.rows.iter().all(|r| r.psnr.is_infinite()));

    let off = constant(91, 16);
    write_png(pred.path().join("a.png"), &off).unwrap();
    let report: MetricReport = llie::metrics::evaluate_folder_with(
        pred.path(),
        gt.path(),
        Default::default(),
        &[&MeanAbs as &dyn ImageMetric],
    )
    .unwrap();
    assert_eq!(report.mean_psnr(), psnr(&off, &img).unwrap());
    assert_eq!(report.mean_ssim(), ssim(&off, &img).unwrap());
    assert_eq!(report.rows[0].extra, vec![1.0]);
    assert!(report.to_csv().starts_with("filename,psnr,ssim,mae\n"));

    write_png(gt.path().join("b.png"), &img).unwrap();
    let err = evaluate_folder(pred.path(), gt.path()).unwrap_err().to_string();
    assert!(err.contains("b.png"), "{err}");
}
