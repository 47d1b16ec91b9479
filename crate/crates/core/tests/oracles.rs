//! Independent reference implementations checked against the library.

mod common;

use rand::Rng;

use aeforge::datagen::{sample_resolution, ResolutionBucket};
use aeforge::imaging::{resize_bilinear, scaled_dims, unique_colors, CropSpec, ImageRGB8};
use aeforge::tensor::{AdamW, AdamWConfig, LrSchedule, ParamSet, Parameter, Tensor};
use common::*;

#[test]
fn conv_matches_nested_loops_over_50_configs() {
    for seed in 0..50 {
        let err = conv_config_error(seed);
        assert!(err <= 1e-6, "config {seed}: {err:e}");
    }
}

#[test]
fn auc_and_tpr_match_enumeration() {
    for seed in 0..10 {
        for ties in [false, true] {
            let err = roc_oracle_error(seed, ties);
            assert!(err <= 1e-12, "seed {seed} ties {ties}: {err:e}");
        }
    }
}

#[test]
fn jpeg_matches_direct_dct() {
    assert_eq!(jpeg_oracle_mismatches(), 0);
}

#[test]
fn jpeg_matches_direct_dct_on_ragged_image() {
    let mut r = rng(12);
    let img = ImageRGB8::from_fn(13, 11, |_, _| [r.gen(), r.gen(), r.gen()]).unwrap();
    for q in [90, 50] {
        assert_eq!(aeforge::imaging::jpeg_degrade(&img, q).unwrap(), reference_jpeg(&img, q));
    }
}

fn reference_resize(img: &ImageRGB8, scale: f64) -> ImageRGB8 {
    let (w, h) = scaled_dims(img.width(), img.height(), scale);
    let src = |d: usize, len: usize| ((d as f64 + 0.5) / scale - 0.5).max(0.0).min((len - 1) as f64);
    ImageRGB8::from_fn(w, h, |x, y| {
        let (sx, sy) = (src(x, img.width()), src(y, img.height()));
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let mut out = [0u8; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let p = |x: usize, y: usize| img.get(x, y)[c] as f64;
            let v = p(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + p(x1, y0) * fx * (1.0 - fy)
                + p(x0, y1) * (1.0 - fx) * fy
                + p(x1, y1) * fx * fy;
            *o = v.round().clamp(0.0, 255.0) as u8;
        }
        out
    })
    .unwrap()
}

#[test]
fn resize_matches_pointwise_bilinear() {
    let mut r = rng(5);
    for _ in 0..20 {
        let (w, h) = (r.gen_range(2..40), r.gen_range(2..40));
        let img = ImageRGB8::from_fn(w, h, |_, _| [r.gen(), r.gen(), r.gen()]).unwrap();
        for scale in [0.75, 0.5, 0.33] {
            let ours = resize_bilinear(&img, scale).unwrap();
            let reference = reference_resize(&img, scale);
            // the two blends associate differently; allow a 1-level rounding flip
            let worst = ours
                .pixels()
                .iter()
                .zip(reference.pixels())
                .flat_map(|(a, b)| (0..3).map(move |c| (a[c] as i32 - b[c] as i32).abs()))
                .max()
                .unwrap();
            assert!(worst <= 1, "{w}x{h} at {scale}: {worst}");
        }
    }
}

#[test]
fn adamw_matches_scalar_reference() {
    let cfg = AdamWConfig::default();
    let mut params = ParamSet::<f64>::new();
    params.push(Parameter::new("p", Tensor::new(vec![2], vec![0.5, -1.5]).unwrap())).unwrap();
    let mut opt = AdamW::new(cfg, &params);
    let (mut theta, mut m, mut v) = ([0.5f64, -1.5], [0.0f64; 2], [0.0f64; 2]);
    let schedule = LrSchedule::new(3, 20, 1e-2).unwrap();
    for step in 1..=20u64 {
        let lr = schedule.lr_at_step(step);
        // gradient of sum(theta^3)
        let grad = theta.map(|t| 3.0 * t * t);
        params.as_mut_slice()[0].tensor.set_grad(Some(grad.to_vec())).unwrap();
        opt.step(&mut params, lr).unwrap();
        for i in 0..2 {
            theta[i] -= lr * cfg.weight_decay * theta[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / (1.0 - cfg.beta1.powi(step as i32));
            let v_hat = v[i] / (1.0 - cfg.beta2.powi(step as i32));
            theta[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        let got = params.get(0).tensor.data();
        for i in 0..2 {
            assert!((got[i] - theta[i]).abs() < 1e-14, "step {step}: {} vs {}", got[i], theta[i]);
        }
    }
}

#[test]
fn schedule_matches_closed_form() {
    let s = LrSchedule::new(200, 1000, 1e-3).unwrap();
    for step in (0..=1000).step_by(7) {
        let expect = if step < 200 {
            1e-3 * step as f64 / 200.0
        } else {
            1e-3 * 0.5 * (1.0 + (std::f64::consts::PI * (step - 200) as f64 / 800.0).cos())
        };
        assert!((s.lr_at_step(step) - expect).abs() < 1e-15);
    }
}

/// Pearson chi-square statistic against a uniform expectation.
fn chi_square(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

#[test]
fn crop_corners_are_uniform() {
    // 13 x positions by 9 y positions; 40k draws.
    let spec = CropSpec { size: 8, count: 40_000, rng_seed: 3 };
    let corners = spec.corners(20, 16).unwrap();
    let (mut xs, mut ys) = (vec![0; 13], vec![0; 9]);
    for (x, y) in corners {
        xs[x] += 1;
        ys[y] += 1;
    }
    // 99.9% quantiles of chi-square with 12 and 8 degrees of freedom
    assert!(chi_square(&xs) < 32.91, "{}", chi_square(&xs));
    assert!(chi_square(&ys) < 26.12, "{}", chi_square(&ys));
}

#[test]
fn bucket_draws_follow_weights() {
    let buckets = ResolutionBucket::desk_defaults();
    let weights = [1.0, 2.0, 3.0, 1.0, 0.5, 2.5];
    let total_w: f64 = weights.iter().sum();
    let n = 20_000;
    let mut r = rng(4);
    let mut counts = vec![0usize; buckets.len()];
    for _ in 0..n {
        let s = sample_resolution(&buckets, &weights, &mut r).unwrap();
        let b = buckets[s.bucket];
        assert!((b.min_side..=b.max_side).contains(&s.width));
        counts[s.bucket] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        let p = weights[i] / total_w;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "bucket {i}: {c}");
    }
}

#[test]
fn unique_colors_matches_sort_dedup() {
    let mut r = rng(6);
    for levels in [2u8, 4, 16, 255] {
        let img = ImageRGB8::from_fn(37, 29, |_, _| {
            [r.gen_range(0..levels), r.gen_range(0..levels), r.gen_range(0..levels)]
        })
        .unwrap();
        let mut px = img.pixels().to_vec();
        px.sort();
        px.dedup();
        assert_eq!(unique_colors(&img), px.len());
    }
}
