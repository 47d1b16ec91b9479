//! Shared by the oracle, gradient and acceptance targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aeforge::datagen::{generate_scene, Label, SceneSpec};
use aeforge::eval::{roc_auc, tpr_at_fpr, ArtifactRow, EvalReport, RobustnessGrid};
use aeforge::imaging::{decode_ppm, encode_ppm, jpeg_degrade, rgb_to_ycbcr, ycbcr_to_rgb, ImageRGB8, QuantTables};
use aeforge::inference::{candidate_thresholds, rates_at, Calibration, DecisionTable};
use aeforge::models::{AeArch, Activation, Autoencoder, Detector, DetectorArch, Normalization};
use aeforge::pipeline::{run_all, RunConfig};
use aeforge::tensor::{Graph, Tensor, Var};
use aeforge::training::SplitEvaluation;

pub type Outcome = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Relative error with a 1e-4 floor on the denominator. Below it the
/// step's own truncation error (order h^2) dominates any comparison.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub max_rel: f64,
    pub checked: usize,
    /// Coordinates where the loss is visibly non-smooth within one step.
    pub kinks: usize,
}

impl GradCheck {
    pub fn merge(self, o: GradCheck) -> GradCheck {
        GradCheck { max_rel: self.max_rel.max(o.max_rel), checked: self.checked + o.checked, kinks: self.kinks + o.kinks }
    }
}

/// Central-difference check of d(loss)/d(leaf) for every coordinate of every
/// leaf. With `allow_kinks`, coordinates sitting on a ReLU corner are counted
/// instead of compared.
pub fn fd_check(leaves: &[Tensor<f64>], allow_kinks: bool, build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) -> GradCheck {
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).data()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone().with_requires_grad(true))).collect();
    let loss = build(&mut g, &vars);
    let f0 = g.value(loss).data()[0];
    let grads = g.backward(loss).unwrap();
    let mut out = GradCheck::default();
    let mut work = leaves.to_vec();
    let mut at = |i: usize, j: usize, delta: f64| -> f64 {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + delta;
        let f = eval(&work);
        work[i].data_mut()[j] = orig;
        f
    };
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v).unwrap().to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let (fp, fm) = (at(i, j, FD_STEP), at(i, j, -FD_STEP));
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            if allow_kinks {
                // A corner within the step makes the central difference depend on
                // the step; a corner at the point itself keeps the gap between the
                // one-sided slopes from shrinking with the step.
                let h = FD_STEP / 10.0;
                let (fp2, fm2) = (at(i, j, h), at(i, j, -h));
                let gap = |h: f64, fp: f64, fm: f64| ((fp - f0) / h - (f0 - fm) / h).abs();
                let coarse = gap(FD_STEP, fp, fm);
                let corner_at_point = coarse > 1e-9 && gap(h, fp2, fm2) > 0.5 * coarse;
                let corner_in_step = rel_error(numeric, (fp2 - fm2) / (2.0 * h)) > 1e-6;
                if corner_at_point || corner_in_step {
                    out.kinks += 1;
                    continue;
                }
            }
            out.checked += 1;
            out.max_rel = out.max_rel.max(rel_error(a, numeric));
        }
    }
    out
}

/// `sum(y * r)` for a fixed random `r`, so every output element gets a
/// distinct upstream gradient.
fn weighted_sum(g: &mut Graph<f64>, y: Var, r: &mut ChaCha8Rng) -> Var {
    let shape = g.value(y).shape().to_vec();
    let w = g.input(random_tensor(r, shape, -1.0, 1.0));
    let p = g.mul(y, w).unwrap();
    g.sum(p).unwrap()
}

fn away_from_zero(r: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = r.gen_range(0.05..1.0);
            if r.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Every differentiable op under one seed, each behind a random weighted sum.
pub fn op_gradients(seed: u64) -> BTreeMap<&'static str, GradCheck> {
    let mut out = BTreeMap::new();
    let mut r = rng(seed);

    let (n, cin, cout) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
    let k = if r.gen_bool(0.5) { 1 } else { 3 };
    let (stride, pad) = (r.gen_range(1..=2), r.gen_range(0..=1));
    let (h, w) = (r.gen_range(k..k + 4), r.gen_range(k..k + 4));
    let leaves = [
        random_tensor(&mut r, vec![n, cin, h, w], -1.0, 1.0),
        random_tensor(&mut r, vec![cout, cin, k, k], -1.0, 1.0),
        random_tensor(&mut r, vec![cout], -1.0, 1.0),
    ];
    let s = r.gen();
    out.insert(
        "conv2d",
        fd_check(&leaves, false, &|g, v| {
            let y = g.conv2d(v[0], v[1], v[2], stride, pad).unwrap();
            weighted_sum(g, y, &mut rng(s))
        }),
    );

    let unary: [(&'static str, fn(&mut Graph<f64>, Var) -> Var, Vec<usize>); 5] = [
        ("upsample_nearest2x", |g, x| g.upsample_nearest2x(x).unwrap(), vec![1, 2, 3, 2]),
        ("relu", |g, x| g.relu(x).unwrap(), vec![2, 7]),
        ("silu", |g, x| g.silu(x).unwrap(), vec![2, 7]),
        ("sigmoid", |g, x| g.sigmoid(x).unwrap(), vec![2, 7]),
        ("global_avg_pool", |g, x| g.global_avg_pool(x).unwrap(), vec![2, 3, 3, 4]),
    ];
    for (name, op, shape) in unary {
        let x = away_from_zero(&mut r, shape);
        let s = r.gen();
        out.insert(name, fd_check(&[x], false, &|g, v| {
            let y = op(g, v[0]);
            weighted_sum(g, y, &mut rng(s))
        }));
    }

    let leaves = [
        random_tensor(&mut r, vec![3, 4], -1.0, 1.0),
        random_tensor(&mut r, vec![2, 4], -1.0, 1.0),
        random_tensor(&mut r, vec![2], -1.0, 1.0),
    ];
    let s = r.gen();
    out.insert(
        "linear",
        fd_check(&leaves, false, &|g, v| {
            let y = g.linear(v[0], v[1], v[2]).unwrap();
            weighted_sum(g, y, &mut rng(s))
        }),
    );

    let logits = random_tensor(&mut r, vec![6], -4.0, 4.0);
    let labels: Vec<f64> = (0..6).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    out.insert("bce_with_logits", fd_check(&[logits], false, &|g, v| g.bce_with_logits(v[0], &labels).unwrap()));

    let leaves = [random_tensor(&mut r, vec![2, 5], -1.0, 1.0), random_tensor(&mut r, vec![2, 5], -1.0, 1.0)];
    out.insert("mse", fd_check(&leaves, false, &|g, v| g.mse(v[0], v[1]).unwrap()));
    out.insert("sum", fd_check(&leaves[..1], false, &|g, v| g.sum(v[0]).unwrap()));
    let s = r.gen();
    out.insert(
        "mul",
        fd_check(&leaves, false, &|g, v| {
            let y = g.mul(v[0], v[1]).unwrap();
            weighted_sum(g, y, &mut rng(s))
        }),
    );
    let s = r.gen();
    out.insert(
        "reshape",
        fd_check(&leaves[..1], false, &|g, v| {
            let y = g.reshape(v[0], vec![5, 2]).unwrap();
            weighted_sum(g, y, &mut rng(s))
        }),
    );
    out
}

fn batch_of_scenes(seed: u64, n: usize, side: usize) -> Tensor<f64> {
    let images: Vec<ImageRGB8> = (0..n)
        .map(|i| generate_scene(&SceneSpec::random(seed + i as u64, side, side)).unwrap())
        .collect();
    aeforge::models::images_to_tensor(&images.iter().collect::<Vec<_>>(), &Normalization::identity()).unwrap()
}

/// The full reconstruction loss of a small autoencoder against its parameters.
pub fn autoencoder_gradients(seed: u64, activation: Activation) -> GradCheck {
    let arch = AeArch { widths: [2, 3, 4], latent_channels: 2, activation };
    let mut ae = Autoencoder::<f64>::new(arch, seed).unwrap();
    // zero-initialized biases put every dead region exactly on a ReLU corner
    let mut r = rng(seed ^ 0xae);
    for p in ae.params_mut().as_mut_slice() {
        if p.name.ends_with(".bias") {
            for v in p.tensor.data_mut() {
                *v = r.gen_range(-0.1..0.1);
            }
        }
    }
    let x = batch_of_scenes(seed, 2, 8);
    let leaves: Vec<Tensor<f64>> = ae.params().iter().map(|p| p.tensor.clone()).collect();
    fd_check(&leaves, activation == Activation::Relu, &|g, v| {
        let input = g.input(x.clone());
        let y = ae.forward_graph(g, v, input).unwrap();
        g.mse(y, input).unwrap()
    })
}

/// The detector's training loss against its parameters. Head and biases are
/// randomized first; at the zero-initialized head every conv gradient vanishes.
pub fn detector_gradients(seed: u64) -> GradCheck {
    let mut det =
        Detector::<f64>::new(DetectorArch { widths: [2, 3, 3, 4] }, 16, Normalization::identity(), seed).unwrap();
    let mut r = rng(seed ^ 0xd37);
    for p in det.params_mut().as_mut_slice() {
        if p.name.starts_with("detector.head") || p.name.ends_with(".bias") {
            for v in p.tensor.data_mut() {
                *v = r.gen_range(-1.0..1.0);
            }
        }
    }
    let x = batch_of_scenes(seed, 2, 16);
    let labels = [0.0, 1.0];
    let leaves: Vec<Tensor<f64>> = det.params().iter().map(|p| p.tensor.clone()).collect();
    fd_check(&leaves, false, &|g, v| {
        let input = g.input(x.clone());
        let logits = det.logits_graph(g, v, input).unwrap();
        g.bce_with_logits(logits, &labels).unwrap()
    })
}

pub const GRADIENT_SEEDS: u64 = 20;

pub fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let mut total = GradCheck::default();
    let mut worst: Option<(String, f64)> = None;
    let mut note = |name: String, c: GradCheck, total: &mut GradCheck| {
        if worst.as_ref().map_or(true, |w| c.max_rel > w.1) {
            worst = Some((name, c.max_rel));
        }
        *total = total.merge(c);
    };
    for seed in 0..GRADIENT_SEEDS {
        for (op, c) in op_gradients(seed) {
            note(format!("{op} seed {seed}"), c, &mut total);
        }
        note(format!("autoencoder/silu seed {seed}"), autoencoder_gradients(seed, Activation::Silu), &mut total);
        note(format!("autoencoder/relu seed {seed}"), autoencoder_gradients(seed, Activation::Relu), &mut total);
        note(format!("detector seed {seed}"), detector_gradients(seed), &mut total);
    }
    let elapsed = start.elapsed();
    let (name, max) = worst.unwrap();
    let detail = format!(
        "{} coordinates over {GRADIENT_SEEDS} seeds, max rel err {max:.2e} ({name}), {} ReLU kinks skipped, {:.1}s",
        total.checked,
        total.kinks,
        elapsed.as_secs_f64()
    );
    let kink_share = total.kinks as f64 / (total.checked + total.kinks) as f64;
    if max < FD_TOLERANCE && elapsed < Duration::from_secs(120) && kink_share < 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ------------------------------------------------------------------ oracles

/// Direct nested-loop convolution, NCHW, zero padding.
pub fn reference_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> (Vec<usize>, Vec<f64>) {
    let &[n, cin, h, wd] = x.shape() else { panic!() };
    let &[cout, _, kh, kw] = w.shape() else { panic!() };
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * cin + ci) * h + iy as usize) * wd + ix as usize];
                                acc += xv * w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (vec![n, cout, oh, ow], out)
}

/// Largest |difference| between the graph conv and the reference over one
/// random configuration.
pub fn conv_config_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let k = r.gen_range(1..=4);
    let (stride, pad) = (r.gen_range(1..=3), r.gen_range(0..=2));
    let (h, w) = (r.gen_range(k..k + 9), r.gen_range(k..k + 9));
    let (n, cin, cout) = (r.gen_range(1..=3), r.gen_range(1..=5), r.gen_range(1..=6));
    let x = random_tensor(&mut r, vec![n, cin, h, w], -1.0, 1.0);
    let wt = random_tensor(&mut r, vec![cout, cin, k, k], -1.0, 1.0);
    let b = random_tensor(&mut r, vec![wt.shape()[0]], -1.0, 1.0);
    let mut g = Graph::<f64>::new();
    let (xv, wv, bv) = (g.input(x.clone()), g.input(wt.clone()), g.input(b.clone()));
    let y = g.conv2d(xv, wv, bv, stride, pad).unwrap();
    let (shape, expect) = reference_conv(&x, &wt, &b, stride, pad);
    assert_eq!(g.value(y).shape(), shape.as_slice());
    g.value(y).data().iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// AUC as the Mann-Whitney statistic: P(pos > neg) + P(tie) / 2.
pub fn reference_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Best TPR over every threshold (flag when score >= t) whose FPR stays within `cap`.
pub fn reference_tpr_at_fpr(pos: &[f64], neg: &[f64], cap: f64) -> f64 {
    let mut thresholds: Vec<f64> = pos.iter().chain(neg).copied().collect();
    thresholds.push(f64::INFINITY);
    let mut best = 0.0f64;
    for t in thresholds {
        let tpr = pos.iter().filter(|&&s| s >= t).count() as f64 / pos.len() as f64;
        let fpr = neg.iter().filter(|&&s| s >= t).count() as f64 / neg.len() as f64;
        if fpr <= cap {
            best = best.max(tpr);
        }
    }
    best
}

/// 1,000 scores split into two classes; `ties` rounds them to two decimals.
pub fn random_scores(seed: u64, ties: bool) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for _ in 0..1000 {
        let is_pos = r.gen_bool(0.5);
        let mut s: f64 = r.gen::<f64>() * 0.8 + if is_pos { 0.2 } else { 0.0 };
        if ties {
            s = (s * 100.0).round() / 100.0;
        }
        if is_pos {
            pos.push(s)
        } else {
            neg.push(s)
        }
    }
    (pos, neg)
}

pub const FPR_CAPS: [f64; 6] = [0.0, 0.001, 0.01, 0.1, 0.5, 1.0];

pub fn roc_oracle_error(seed: u64, ties: bool) -> f64 {
    let (pos, neg) = random_scores(seed, ties);
    let (_, auc) = roc_auc(&pos, &neg).unwrap();
    let mut err = (auc - reference_auc(&pos, &neg)).abs();
    for cap in FPR_CAPS {
        err = err.max((tpr_at_fpr(&pos, &neg, cap).unwrap() - reference_tpr_at_fpr(&pos, &neg, cap)).abs());
    }
    err
}

/// JPEG quantization of one plane by the two-dimensional DCT sum written out
/// term by term, then the inverse sum.
pub fn reference_jpeg_plane(plane: &[f64], width: usize, height: usize, table: &[u16; 64]) -> Vec<f64> {
    use std::f64::consts::PI;
    let a = |u: usize| if u == 0 { (0.125f64).sqrt() } else { 0.5 };
    let basis = |u: usize, x: usize| a(u) * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
    let mut out = vec![0.0; width * height];
    for by in (0..height.div_ceil(8)).map(|b| b * 8) {
        for bx in (0..width.div_ceil(8)).map(|b| b * 8) {
            let px = |x: usize, y: usize| plane[(by + y).min(height - 1) * width + (bx + x).min(width - 1)] - 128.0;
            let mut q = [0.0; 64];
            for v in 0..8 {
                for u in 0..8 {
                    let mut f = 0.0;
                    for y in 0..8 {
                        for x in 0..8 {
                            f += basis(v, y) * basis(u, x) * px(x, y);
                        }
                    }
                    let step = table[v * 8 + u] as f64;
                    q[v * 8 + u] = (f / step).round() * step;
                }
            }
            for y in 0..8 {
                for x in 0..8 {
                    if bx + x >= width || by + y >= height {
                        continue;
                    }
                    let mut p = 0.0;
                    for v in 0..8 {
                        for u in 0..8 {
                            p += basis(v, y) * basis(u, x) * q[v * 8 + u];
                        }
                    }
                    out[(by + y) * width + bx + x] = p + 128.0;
                }
            }
        }
    }
    out
}

pub fn reference_jpeg(image: &ImageRGB8, quality: u8) -> ImageRGB8 {
    let t = QuantTables::for_quality(quality).unwrap();
    let mut planes = rgb_to_ycbcr(image);
    let (w, h) = (image.width(), image.height());
    planes.y = reference_jpeg_plane(&planes.y, w, h, &t.luma);
    planes.cb = reference_jpeg_plane(&planes.cb, w, h, &t.chroma);
    planes.cr = reference_jpeg_plane(&planes.cr, w, h, &t.chroma);
    ycbcr_to_rgb(&planes).unwrap()
}

/// Fixed 8x8 blocks: flat, ramps, checkerboard, a hard edge and seeded noise.
pub fn jpeg_blocks() -> Vec<ImageRGB8> {
    let mut r = rng(8);
    let noise: Vec<[u8; 3]> = (0..64).map(|_| [r.gen(), r.gen(), r.gen()]).collect();
    vec![
        ImageRGB8::filled(8, 8, [200, 30, 90]).unwrap(),
        ImageRGB8::from_fn(8, 8, |x, y| [(x * 32) as u8, (y * 32) as u8, ((x + y) * 16) as u8]).unwrap(),
        ImageRGB8::from_fn(8, 8, |x, y| if (x + y) % 2 == 0 { [255; 3] } else { [0; 3] }).unwrap(),
        ImageRGB8::from_fn(8, 8, |x, _| if x < 3 { [250, 250, 10] } else { [5, 40, 240] }).unwrap(),
        ImageRGB8::new(8, 8, noise).unwrap(),
    ]
}

pub const JPEG_QUALITIES: [u8; 7] = [100, 95, 90, 80, 75, 50, 10];

/// Count of (block, quality) pairs where the degrader differs from the reference.
pub fn jpeg_oracle_mismatches() -> usize {
    let mut bad = 0;
    for block in jpeg_blocks() {
        for q in JPEG_QUALITIES {
            if jpeg_degrade(&block, q).unwrap() != reference_jpeg(&block, q) {
                bad += 1;
            }
        }
    }
    bad
}

pub fn criterion_oracles() -> Outcome {
    let conv = (0..50).map(conv_config_error).fold(0.0, f64::max);
    let roc = (0..10).map(|s| roc_oracle_error(s, s % 2 == 1)).fold(0.0, f64::max);
    let jpeg = jpeg_oracle_mismatches();
    let detail = format!(
        "conv max err {conv:.1e} over 50 configs, ROC max err {roc:.1e} over 10 draws of 1000 scores, JPEG {jpeg} mismatches over {} blocks",
        jpeg_blocks().len() * JPEG_QUALITIES.len()
    );
    if conv <= 1e-6 && roc <= 1e-12 && jpeg == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ------------------------------------------------------------ desk pipeline

pub struct DeskRun {
    pub config: RunConfig,
    pub elapsed: Duration,
}

/// Runs every stage of a profile into a fresh directory.
pub fn run_profile(profile: &str, dir: &Path) -> (RunConfig, Duration) {
    if dir.exists() {
        std::fs::remove_dir_all(dir).unwrap();
    }
    let config = RunConfig::profile(profile, dir).unwrap();
    let start = Instant::now();
    run_all(&config).unwrap_or_else(|e| panic!("{profile} pipeline failed: {e}"));
    (config, start.elapsed())
}

pub fn scratch_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

fn read<T: serde::de::DeserializeOwned>(path: PathBuf) -> T {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn report(config: &RunConfig) -> EvalReport {
    EvalReport::load(config.report_path()).unwrap()
}

#[derive(serde::Deserialize)]
struct HistoryEpoch {
    val_loss: f64,
}

#[derive(serde::Deserialize)]
struct HistorySummary {
    epochs: Vec<HistoryEpoch>,
}

pub fn criterion_training(run: &DeskRun) -> Outcome {
    let c = &run.config;
    let history: HistorySummary =
        read(c.paths.report_dir.join("history").join(format!("{}.json", c.autoencoder.name)));
    let first = history.epochs.first().unwrap().val_loss;
    let last = history.epochs.get(4).map(|e| e.val_loss);
    let crop: SplitEvaluation = read(c.paths.report_dir.join("crop_test.json"));
    let acc = crop.accuracy.unwrap_or(0.0);
    let f1 = |label| crop.row(label).f1.unwrap_or(0.0);
    let (f1_orig, f1_recon) = (f1(Label::Original), f1(Label::Reconstructed));
    let minutes = run.elapsed.as_secs_f64() / 60.0;
    let detail = format!(
        "AE val MSE {first:.5} -> {} (epoch 5), detector accuracy {acc:.4} and F1 {f1_orig:.4}/{f1_recon:.4} on {} crops, pipeline {minutes:.1} min",
        last.map_or("missing".into(), |l| format!("{l:.5}")),
        crop.counts.total()
    );
    let ok = last.is_some_and(|l| l < 0.5 * first)
        && acc >= 0.90
        && f1_orig >= 0.85
        && f1_recon >= 0.85
        && crop.counts.total() >= 1000
        && minutes < 20.0;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn holdout_sources(report: &EvalReport, config: &RunConfig) -> Vec<String> {
    config
        .holdouts
        .iter()
        .filter_map(|h| {
            report
                .decisions
                .iter()
                .find(|r| r.source.starts_with(&format!("{}-", h.name)) && !r.source.contains("-small-"))
                .map(|r| r.source.clone())
        })
        .collect()
}

pub fn criterion_generalization(run: &DeskRun) -> Outcome {
    let report = report(&run.config);
    let mut parts = Vec::new();
    let mut ok = true;
    let sources = holdout_sources(&report, &run.config);
    ok &= sources.len() >= 2;
    for s in &sources {
        let row = report.decisions.iter().find(|r| &r.source == s).unwrap();
        let (one, multi) = (row.one_try.rate.unwrap_or(0.0), row.multi.rate.unwrap_or(0.0));
        ok &= multi >= one - 0.02;
        parts.push(format!("{s} TPR {one:.3} -> {multi:.3}"));
    }
    for row in report.decisions.iter().filter(|r| r.label == Label::Original) {
        let (one, multi) = (row.one_try.rate.unwrap_or(1.0), row.multi.rate.unwrap_or(1.0));
        ok &= multi <= one;
        parts.push(format!("{} FPR {one:.4} -> {multi:.4}", row.source));
    }
    let detail = format!("1 try -> {} tries: {}", report.config.tries, parts.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn criterion_calibration(run: &DeskRun) -> Outcome {
    let c = &run.config;
    let cal: Calibration = read(c.paths.report_dir.join("calibration.json"));
    let table: DecisionTable = read(c.paths.report_dir.join("val_decisions.json"));
    let scores = |l| table.items.iter().filter(|i| i.label == l).map(|i| i.multi).collect::<Vec<_>>();
    let (orig, recon) = (scores(Label::Original), scores(Label::Reconstructed));
    let target = c.evaluation.fpr_target;
    let best = candidate_thresholds(&orig, &recon)
        .into_iter()
        .map(|t| rates_at(&orig, &recon, t))
        .filter(|&(fpr, _)| fpr <= target)
        .map(|(_, recall)| recall)
        .fold(f64::NEG_INFINITY, f64::max);
    let (fpr, recall) = rates_at(&orig, &recon, cal.threshold);
    let detail = format!(
        "t = {:.6}, FPR {fpr} (target {target}), recall {recall:.4} vs best candidate recall {best:.4} on {}+{} validation images",
        cal.threshold,
        orig.len(),
        recon.len()
    );
    if fpr <= target && recall == best && fpr == cal.fpr && recall == cal.recall {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn criterion_artifacts(run: &DeskRun) -> Outcome {
    let rows: Vec<ArtifactRow> = read(run.config.paths.report_dir.join("artifacts.json"));
    let get = |name: &str| rows.iter().find(|r| r.name == name);
    let mut ok = true;
    let orig = get("original").map(|r| r.default);
    ok &= orig.is_some_and(|s| s.unique_colors == 2 && s.bw_fraction == 1.0);
    let jpeg: Vec<usize> =
        [100, 95, 75, 50].iter().filter_map(|q| get(&format!("jpeg{q}")).map(|r| r.default.unique_colors)).collect();
    ok &= jpeg.len() == 4 && jpeg.windows(2).all(|w| w[0] < w[1]);
    let q50 = jpeg.last().copied().unwrap_or(usize::MAX);
    let mut aes = Vec::new();
    for stage in run.config.autoencoders() {
        match get(&stage.name) {
            Some(r) => {
                ok &= r.default.unique_colors > q50 && r.default.bw_fraction < 0.9;
                aes.push(format!("{} {}/{:.3}", stage.name, r.default.unique_colors, r.default.bw_fraction));
            }
            None => ok = false,
        }
    }
    let detail = format!(
        "original {:?}, JPEG 100/95/75/50 unique colors {jpeg:?}, AEs (unique/bw) {}",
        orig.map(|s| (s.unique_colors, s.bw_fraction)),
        aes.join(", ")
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn criterion_robustness(run: &DeskRun) -> Outcome {
    let grid: RobustnessGrid = read(run.config.paths.report_dir.join("robustness.json"));
    let report = report(&run.config);
    let mut ok = ["jpeg90", "jpeg80", "resize75", "resize50"].iter().all(|t| grid.transforms.iter().any(|g| g.to_string() == *t));
    let skipped: Vec<String> = grid
        .rows
        .iter()
        .flat_map(|r| r.cells.iter().filter(|c| c.skipped.is_some()).map(move |c| format!("{}/{}", r.source, c.transform)))
        .collect();
    ok &= !skipped.is_empty()
        && grid.rows.iter().flat_map(|r| &r.cells).all(|c| c.skipped.as_ref().map_or(true, |s| !s.is_empty()));
    let mut parts = Vec::new();
    let sources = holdout_sources(&report, &run.config);
    ok &= sources.len() >= 2;
    for s in &sources {
        let row = grid.row(s).unwrap();
        let rate = |t: &str| row.cell(t).and_then(|c| c.rate);
        match (rate("resize75"), rate("resize50")) {
            (Some(r75), Some(r50)) => {
                ok &= r50 <= r75;
                parts.push(format!("{s} resize75 {r75:.3} resize50 {r50:.3}"));
            }
            _ => ok = false,
        }
    }
    let detail = format!("{}; skipped cells: {}", parts.join(", "), skipped.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Hash of every file under the corpus, checkpoint and report directories,
/// except stage manifests (they record wall-clock durations).
pub fn artifact_hashes(config: &RunConfig) -> BTreeMap<String, String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for e in entries {
            let path = e.unwrap().path();
            if path.is_dir() {
                if path.file_name().is_some_and(|n| n == "stages") {
                    continue;
                }
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, aeforge::sha256_hex(&std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = BTreeMap::new();
    for dir in [&config.paths.corpus_dir, &config.paths.checkpoint_dir, &config.paths.report_dir] {
        walk(dir, dir.parent().unwrap(), &mut out);
    }
    out
}

pub fn criterion_determinism() -> Outcome {
    let dir = scratch_dir("determinism-smoke");
    let (config, _) = run_profile("smoke", &dir);
    let first = artifact_hashes(&config);
    let (config, _) = run_profile("smoke", &dir);
    let second = artifact_hashes(&config);
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    let has = |p: &str| first.keys().any(|k| k.starts_with(p));
    let detail = format!(
        "{} files compared across two smoke runs (corpus, checkpoints, reports), {} differ{}",
        first.len(),
        differing.len(),
        if differing.is_empty() { String::new() } else { format!(": {differing:?}") }
    );
    if differing.is_empty() && first.len() == second.len() && has("checkpoints") && has("corpus") && has("reports") {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn criterion_formats(run: Option<&DeskRun>) -> Outcome {
    let mut r = rng(9);
    let mut ppm = 0;
    for _ in 0..50 {
        let (w, h) = (r.gen_range(1..40), r.gen_range(1..40));
        let img = ImageRGB8::from_fn(w, h, |_, _| [r.gen(), r.gen(), r.gen()]).unwrap();
        let bytes = encode_ppm(&img);
        let back = decode_ppm(&bytes).unwrap();
        if back != img || encode_ppm(&back) != bytes {
            return Err(format!("PPM round trip failed at {w}x{h}"));
        }
        ppm += 1;
    }
    let ae = Autoencoder::<f32>::new(AeArch::default(), 3).unwrap();
    let bytes = ae.to_checkpoint_bytes().unwrap();
    let ae_ok = Autoencoder::<f32>::from_checkpoint_bytes(&bytes).unwrap().to_checkpoint_bytes().unwrap() == bytes;
    let det = Detector::<f32>::new(DetectorArch::default(), 32, Normalization::identity(), 4).unwrap();
    let bytes = det.to_checkpoint_bytes().unwrap();
    let det_ok = Detector::<f32>::from_checkpoint_bytes(&bytes).unwrap().to_checkpoint_bytes().unwrap() == bytes;
    let report_ok = match run {
        Some(run) => {
            let text = std::fs::read_to_string(run.config.report_path()).unwrap();
            EvalReport::from_json(&text).unwrap().to_canonical_json() == text
        }
        None => true,
    };
    let detail = format!(
        "{ppm} PPM round trips, autoencoder checkpoint {ae_ok}, detector checkpoint {det_ok}, report reserialization {report_ok}"
    );
    if ae_ok && det_ok && report_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}
