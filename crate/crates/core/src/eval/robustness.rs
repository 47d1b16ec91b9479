use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{load_entry_image, Label, ManifestEntry};
use crate::imaging::{jpeg_degrade, resize_bilinear, scaled_dims, ImageRGB8};
use crate::inference::{decide_entries, BatchConfig, InferError};
use crate::models::Detector;

/// A distortion applied to the full image before any crop is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transform {
    Identity,
    Jpeg { quality: u8 },
    Resize { scale: f64 },
}

impl Transform {
    /// Identity, JPEG 90 and 80, resize 75% and 50%.
    pub fn standard_grid() -> Vec<Self> {
        vec![
            Transform::Identity,
            Transform::Jpeg { quality: 90 },
            Transform::Jpeg { quality: 80 },
            Transform::Resize { scale: 0.75 },
            Transform::Resize { scale: 0.5 },
        ]
    }

    pub fn apply(&self, image: &ImageRGB8) -> crate::imaging::Result<ImageRGB8> {
        match *self {
            Transform::Identity => Ok(image.clone()),
            Transform::Jpeg { quality } => jpeg_degrade(image, quality),
            Transform::Resize { scale } => resize_bilinear(image, scale),
        }
    }

    /// Output size for a `width x height` input.
    pub fn output_dims(&self, width: usize, height: usize) -> (usize, usize) {
        match *self {
            Transform::Resize { scale } => scaled_dims(width, height, scale),
            _ => (width, height),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Transform::Identity => write!(f, "identity"),
            Transform::Jpeg { quality } => write!(f, "jpeg{quality}"),
            Transform::Resize { scale } => write!(f, "resize{}", (scale * 100.0).round()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub transform: String,
    /// Multi-crop TPR (generated sources) or FPR (originals) at the
    /// calibrated threshold; `None` when skipped.
    pub rate: Option<f64>,
    pub flagged: usize,
    pub images: usize,
    pub errors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub source: String,
    pub label: Label,
    pub cells: Vec<RobustnessCell>,
}

impl RobustnessRow {
    pub fn cell(&self, transform: &str) -> Option<&RobustnessCell> {
        self.cells.iter().find(|c| c.transform == transform)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessGrid {
    pub transforms: Vec<Transform>,
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessGrid {
    pub fn row(&self, source: &str) -> Option<&RobustnessRow> {
        self.rows.iter().find(|r| r.source == source)
    }
}

/// Why a source cannot be evaluated under `t`: some image would shrink below
/// the crop size.
fn skip_reason(images: &[(usize, usize)], t: &Transform, crop: usize) -> Option<String> {
    images.iter().find_map(|&(w, h)| {
        let (tw, th) = t.output_dims(w, h);
        (tw < crop || th < crop).then(|| format!("{t} turns {w}x{h} into {tw}x{th}, smaller than the {crop}px crop"))
    })
}

/// Multi-crop decisions per (source, transform), transforming each full image
/// before crops are sampled. A source is skipped for a transform, with the
/// reason recorded, when any of its images would fall below crop size.
pub fn robustness_sweep(
    entries: &[&ManifestEntry],
    root: &Path,
    detector: &Detector,
    config: &BatchConfig,
    transforms: &[Transform],
) -> Result<RobustnessGrid, InferError> {
    let mut sources: Vec<(String, Label)> = Vec::new();
    for e in entries {
        if !sources.iter().any(|(s, _)| *s == e.source) {
            sources.push((e.source.clone(), e.label));
        }
    }
    let crop = config.multi.crop_size;
    let mut rows = Vec::new();
    for (source, label) in sources {
        let mine: Vec<&ManifestEntry> = entries.iter().copied().filter(|e| e.source == source).collect();
        let dims: Vec<(usize, usize)> = mine
            .iter()
            .filter_map(|e| load_entry_image(root, e).ok().map(|i| (i.width(), i.height())))
            .collect();
        let mut cells = Vec::new();
        for t in transforms {
            let name = t.to_string();
            if let Some(reason) = skip_reason(&dims, t, crop) {
                log::info!("{source}: skipping {name}: {reason}");
                cells.push(RobustnessCell {
                    transform: name,
                    rate: None,
                    flagged: 0,
                    images: 0,
                    errors: 0,
                    skipped: Some(reason),
                });
                continue;
            }
            let table = decide_entries(&mine, root, detector, config, |img| Ok(t.apply(&img)?))?;
            let row = table.row(&source).expect("source has entries");
            cells.push(RobustnessCell {
                transform: name,
                rate: row.multi.rate,
                flagged: row.multi.flagged,
                images: row.images,
                errors: row.errors,
                skipped: None,
            });
        }
        rows.push(RobustnessRow { source, label, cells });
    }
    Ok(RobustnessGrid { transforms: transforms.to_vec(), rows })
}
