//! The image-level decision rule: score random crops, average, and compare
//! against a per-detector threshold; plus threshold calibration at a target
//! false-positive rate.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{load_entry_image, DataError, Label, ManifestEntry};
use crate::imaging::{resize_to, CropSpec, ImageError, ImageRGB8};
use crate::models::{Detector, ModelError};
use crate::seeds::derive_seed;
use crate::tensor::compensated_mean;

#[derive(Debug, Error)]
pub enum InferError {
    #[error("invalid decision setup: {0}")]
    Validation(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = InferError> = std::result::Result<T, E>;

/// Threshold of the single-crop rule.
pub const SINGLE_CROP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    pub tries: usize,
    pub threshold: f64,
    pub crop_size: usize,
    pub seed: u64,
    /// Resize images smaller than the crop up to crop size instead of failing.
    #[serde(default)]
    pub upscale_small: bool,
}

impl DecisionConfig {
    pub fn one_try(crop_size: usize, seed: u64) -> Self {
        Self { tries: 1, threshold: SINGLE_CROP_THRESHOLD, crop_size, seed, upscale_small: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tries == 0 || self.crop_size == 0 {
            return Err(InferError::Validation(format!(
                "tries ({}) and crop size ({}) must be at least 1",
                self.tries, self.crop_size
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(InferError::Validation(format!("threshold {} outside (0,1)", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropScore {
    pub x: usize,
    pub y: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// 1 when the image is judged not original.
    pub decision: u8,
    pub aggregate: f64,
    pub crops: Vec<CropScore>,
    pub threshold: f64,
    pub seed: u64,
    #[serde(default)]
    pub upscaled: bool,
}

/// Mean of per-crop probabilities, kept inside `[min, max]` of the inputs.
pub fn aggregate(probs: &[f64]) -> Option<f64> {
    let mean = compensated_mean(probs)?;
    let lo = probs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(mean.clamp(lo, hi))
}

/// Strict comparison: an aggregate equal to the threshold is original.
pub fn decision(aggregate: f64, threshold: f64) -> u8 {
    u8::from(aggregate > threshold)
}

/// Per-image crop seed, independent of evaluation order.
pub fn image_seed(global_seed: u64, path: &str) -> u64 {
    derive_seed(global_seed, path, 0)
}

pub fn decide(image: &ImageRGB8, detector: &Detector, config: &DecisionConfig) -> Result<Verdict> {
    config.validate()?;
    if config.crop_size != detector.crop_size() {
        return Err(InferError::Validation(format!(
            "decision crop size {} differs from the detector's {}",
            config.crop_size,
            detector.crop_size()
        )));
    }
    let s = config.crop_size;
    let small = image.width() < s || image.height() < s;
    let upscaled;
    let image = if small && config.upscale_small {
        upscaled = resize_to(image, image.width().max(s), image.height().max(s))?;
        &upscaled
    } else {
        image
    };
    let spec = CropSpec { size: s, count: config.tries, rng_seed: config.seed };
    let corners = spec.corners(image.width(), image.height())?;
    let crops = corners
        .iter()
        .map(|&(x, y)| image.crop(x, y, s, s))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let probs = detector.probabilities(&crops.iter().collect::<Vec<_>>())?;
    let agg = aggregate(&probs).expect("tries >= 1");
    Ok(Verdict {
        decision: decision(agg, config.threshold),
        aggregate: agg,
        crops: corners.iter().zip(&probs).map(|(&(x, y), &prob)| CropScore { x, y, prob }).collect(),
        threshold: config.threshold,
        seed: config.seed,
        upscaled: small && config.upscale_small,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub fpr: f64,
    pub recall: f64,
    pub fpr_target: f64,
}

/// Every distinct observed score plus the midpoint between neighbours, ascending.
pub fn candidate_thresholds(originals: &[f64], reconstructed: &[f64]) -> Vec<f64> {
    let mut scores: Vec<f64> = originals.iter().chain(reconstructed).copied().collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let mut out = Vec::with_capacity(2 * scores.len());
    for (i, &s) in scores.iter().enumerate() {
        if i > 0 {
            out.push(scores[i - 1] + (s - scores[i - 1]) / 2.0);
        }
        out.push(s);
    }
    out
}

/// `(FPR, recall)` of the strict rule `score > t`.
pub fn rates_at(originals: &[f64], reconstructed: &[f64], t: f64) -> (f64, f64) {
    let above = |v: &[f64]| v.iter().filter(|&&s| s > t).count() as f64 / v.len() as f64;
    (above(originals), above(reconstructed))
}

/// Smallest candidate threshold whose FPR on `originals` is within
/// `fpr_target`; because recall only falls as `t` grows, this is also the
/// recall-maximal admissible threshold.
pub fn calibrate_threshold(originals: &[f64], reconstructed: &[f64], fpr_target: f64) -> Result<Calibration> {
    if originals.is_empty() || reconstructed.is_empty() {
        return Err(InferError::Validation("calibration needs scores for both classes".into()));
    }
    if originals.iter().chain(reconstructed).any(|s| !s.is_finite()) || fpr_target.is_nan() {
        return Err(InferError::Validation("calibration scores must be finite".into()));
    }
    let candidates = candidate_thresholds(originals, reconstructed);
    let mut sorted = originals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let fpr = |t: f64| (sorted.len() - sorted.partition_point(|&s| s <= t)) as f64 / sorted.len() as f64;
    let threshold = if fpr_target < 0.0 {
        let max = *candidates.last().expect("non-empty");
        log::warn!("fpr target {fpr_target} is unattainable; using the maximum score {max}");
        max
    } else {
        // FPR is non-increasing in t, so the admissible set is a suffix
        let first = candidates.partition_point(|&t| fpr(t) > fpr_target);
        candidates[first]
    };
    let (fpr, recall) = rates_at(originals, reconstructed, threshold);
    Ok(Calibration { threshold, fpr, recall, fpr_target })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDecision {
    pub path: String,
    pub source: String,
    pub label: Label,
    /// Probability of the single crop.
    pub one_try: f64,
    /// Mean over the multi-crop draw.
    pub multi: f64,
    pub one_try_decision: u8,
    pub multi_decision: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemError {
    pub path: String,
    pub message: String,
}

/// Flag counts for one source under one mode. `rate` is TPR for generated
/// sources and FPR for original ones; `None` if the source has no images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeRate {
    pub flagged: usize,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRow {
    pub source: String,
    pub label: Label,
    pub images: usize,
    pub errors: usize,
    pub one_try: ModeRate,
    pub multi: ModeRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTable {
    pub one_try: DecisionConfig,
    pub multi: DecisionConfig,
    pub rows: Vec<SourceRow>,
    pub items: Vec<ItemDecision>,
    pub errors: Vec<ItemError>,
}

impl DecisionTable {
    pub fn row(&self, source: &str) -> Option<&SourceRow> {
        self.rows.iter().find(|r| r.source == source)
    }
}

/// The two inference modes compared side by side. `seed` in each config is
/// the global seed; every image derives its own from it and its path, so the
/// single crop is the first crop of the multi-crop draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub one_try: DecisionConfig,
    pub multi: DecisionConfig,
}

impl BatchConfig {
    pub fn new(crop_size: usize, tries: usize, threshold: f64, seed: u64) -> Self {
        Self {
            one_try: DecisionConfig::one_try(crop_size, seed),
            multi: DecisionConfig { tries, threshold, crop_size, seed, upscale_small: false },
        }
    }
}

pub(crate) fn decide_entries<F>(
    entries: &[&ManifestEntry],
    root: &Path,
    detector: &Detector,
    config: &BatchConfig,
    mut prepare: F,
) -> Result<DecisionTable>
where
    F: FnMut(ImageRGB8) -> Result<ImageRGB8>,
{
    config.one_try.validate()?;
    config.multi.validate()?;
    let mut items = Vec::new();
    let mut errors = Vec::new();
    for e in entries {
        let outcome = load_entry_image(root, e).map_err(InferError::from).and_then(&mut prepare).and_then(|img| {
            let one = DecisionConfig { seed: image_seed(config.one_try.seed, &e.path), ..config.one_try };
            let multi = DecisionConfig { seed: image_seed(config.multi.seed, &e.path), ..config.multi };
            Ok((decide(&img, detector, &one)?, decide(&img, detector, &multi)?))
        });
        match outcome {
            Ok((one, multi)) => items.push(ItemDecision {
                path: e.path.clone(),
                source: e.source.clone(),
                label: e.label,
                one_try: one.aggregate,
                multi: multi.aggregate,
                one_try_decision: one.decision,
                multi_decision: multi.decision,
            }),
            Err(err) => {
                log::warn!("{}: {err}", e.path);
                errors.push(ItemError { path: e.path.clone(), message: err.to_string() });
            }
        }
    }
    let mut rows: Vec<SourceRow> = Vec::new();
    for e in entries {
        if !rows.iter().any(|r| r.source == e.source) {
            let mine: Vec<&ItemDecision> = items.iter().filter(|i| i.source == e.source).collect();
            let n = mine.len();
            let rate = |flagged: usize| ModeRate { flagged, rate: (n > 0).then(|| flagged as f64 / n as f64) };
            rows.push(SourceRow {
                source: e.source.clone(),
                label: e.label,
                images: n,
                errors: entries.iter().filter(|x| x.source == e.source).count() - n,
                one_try: rate(mine.iter().filter(|i| i.one_try_decision == 1).count()),
                multi: rate(mine.iter().filter(|i| i.multi_decision == 1).count()),
            });
        }
    }
    Ok(DecisionTable { one_try: config.one_try, multi: config.multi, rows, items, errors })
}

/// Per-source TPR (generated sources) or FPR (original sources) in both
/// modes. Unreadable or unusable images are recorded and skipped.
pub fn batch_decide(
    entries: &[&ManifestEntry],
    root: &Path,
    detector: &Detector,
    config: &BatchConfig,
) -> Result<DecisionTable> {
    decide_entries(entries, root, detector, config, Ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Split;
    use crate::imaging::save_ppm;
    use crate::models::{DetectorArch, Normalization};

    fn detector(bias: f32) -> Detector {
        let mut d = Detector::new(DetectorArch { widths: [2, 2, 2, 2] }, 8, Normalization::identity(), 1).unwrap();
        let p = d.params_mut().as_mut_slice();
        p.last_mut().unwrap().tensor.data_mut()[0] = bias;
        d
    }

    #[test]
    fn constant_probabilities() {
        let img = ImageRGB8::filled(20, 20, [9, 9, 9]).unwrap();
        let d = detector(2.1972245773);
        let v = decide(&img, &d, &DecisionConfig { tries: 10, threshold: 0.5, crop_size: 8, seed: 3, upscale_small: false })
            .unwrap();
        assert_eq!(v.decision, 1);
        assert!((v.aggregate - 0.9).abs() < 1e-6);
        assert_eq!(v.crops.len(), 10);
    }

    #[test]
    fn mean_of_tenths_is_not_above_its_threshold() {
        let probs = [0.3, 0.1, 0.3, 0.1, 0.2, 0.2, 0.1, 0.3, 0.2, 0.2];
        let agg = aggregate(&probs).unwrap();
        assert_eq!(agg, 0.2);
        assert_eq!(decision(agg, 0.20), 0);
        assert_eq!(decision(0.5, 0.5), 0);
    }

    #[test]
    fn single_try_is_first_crop() {
        let img = ImageRGB8::from_fn(30, 25, |x, y| [(x * 8) as u8, (y * 9) as u8, 0]).unwrap();
        let mut d = detector(0.3);
        d.params_mut().as_mut_slice().iter_mut().for_each(|p| p.tensor.data_mut().iter_mut().for_each(|v| *v += 0.1));
        let one = decide(&img, &d, &DecisionConfig::one_try(8, 5)).unwrap();
        let ten = decide(&img, &d, &DecisionConfig { tries: 10, ..DecisionConfig::one_try(8, 5) }).unwrap();
        assert_eq!((one.crops[0].x, one.crops[0].y), (ten.crops[0].x, ten.crops[0].y));
        assert_eq!(one.aggregate, one.crops[0].prob);
        assert_eq!(one.decision, decision(one.crops[0].prob, 0.5));
    }

    #[test]
    fn small_images() {
        let img = ImageRGB8::filled(5, 12, [1, 2, 3]).unwrap();
        let cfg = DecisionConfig::one_try(8, 1);
        assert!(matches!(decide(&img, &detector(0.0), &cfg), Err(InferError::Image(ImageError::TooSmall { .. }))));
        let v = decide(&img, &detector(0.0), &DecisionConfig { upscale_small: true, ..cfg }).unwrap();
        assert!(v.upscaled);
    }

    #[test]
    fn calibration_separable() {
        let c = calibrate_threshold(&[0.01, 0.05, 0.1], &[0.9, 0.95], 0.001).unwrap();
        // scores equal to t stay original, so the top original score is admissible
        assert_eq!(c.threshold, 0.1);
        assert_eq!((c.fpr, c.recall), (0.0, 1.0));
        let loose = calibrate_threshold(&[0.01, 0.05, 0.1], &[0.9, 0.95], 1.0).unwrap();
        assert_eq!(loose.threshold, 0.01);
        assert_eq!(loose.recall, 1.0);
        let neg = calibrate_threshold(&[0.2], &[0.4, 0.7], -0.5).unwrap();
        assert_eq!(neg.threshold, 0.7);
        assert!(calibrate_threshold(&[], &[0.1], 0.1).is_err());
    }

    #[test]
    fn batch_rates_and_item_errors() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("x")).unwrap();
        let mut entries = Vec::new();
        for i in 0..4 {
            let path = format!("x/{i}.ppm");
            save_ppm(&ImageRGB8::filled(16, 16, [i as u8; 3]).unwrap(), dir.path().join(&path)).unwrap();
            entries.push(ManifestEntry {
                path,
                label: if i < 2 { Label::Original } else { Label::Reconstructed },
                source: if i < 2 { "original".into() } else { "ae-b".into() },
                bucket: None,
                seed: 0,
                split: Split::Test,
                origin: None,
                high_res: false,
            });
        }
        entries.push(ManifestEntry { path: "missing.ppm".into(), ..entries[3].clone() });
        let refs: Vec<&ManifestEntry> = entries.iter().collect();
        let table = batch_decide(&refs, dir.path(), &detector(3.0), &BatchConfig::new(8, 10, 0.5, 1)).unwrap();
        assert_eq!(table.errors.len(), 1);
        let gen = table.row("ae-b").unwrap();
        assert_eq!((gen.images, gen.errors, gen.multi.rate), (2, 1, Some(1.0)));
        assert_eq!(table.row("original").unwrap().one_try.rate, Some(1.0));
        let quiet = batch_decide(&refs, dir.path(), &detector(-3.0), &BatchConfig::new(8, 10, 0.5, 1)).unwrap();
        assert_eq!(quiet.row("original").unwrap().multi.rate, Some(0.0));
    }
}
