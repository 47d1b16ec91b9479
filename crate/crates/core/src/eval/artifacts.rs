use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::imaging::{bw_fraction, color_randomize, jpeg_degrade, resize_bilinear, save_ppm, unique_colors, ImageRGB8};
use crate::models::Autoencoder;
use crate::seeds::derive_seed;

use super::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorStats {
    pub unique_colors: usize,
    pub bw_fraction: f64,
}

impl ColorStats {
    pub fn of(image: &ImageRGB8) -> Self {
        Self { unique_colors: unique_colors(image), bw_fraction: bw_fraction(image) }
    }
}

/// One row of the test-card table. JPEG rows carry only the default column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRow {
    pub name: String,
    pub default: ColorStats,
    pub jpeg85: Option<ColorStats>,
    pub resize50: Option<ColorStats>,
}

impl ArtifactRow {
    fn with_transforms(name: String, image: &ImageRGB8) -> Result<Self> {
        let jpeg85 = jpeg_degrade(image, 85).map_err(img_err)?;
        let resize50 = resize_bilinear(image, 0.5).map_err(img_err)?;
        Ok(Self {
            name,
            default: ColorStats::of(image),
            jpeg85: Some(ColorStats::of(&jpeg85)),
            resize50: Some(ColorStats::of(&resize50)),
        })
    }
}

fn img_err(e: crate::imaging::ImageError) -> EvalError {
    EvalError::Validation(e.to_string())
}

/// Color statistics of the card, its JPEG versions and its reconstruction by
/// each autoencoder. When `viz_dir` is set, each row image and its
/// color-randomized version are written there as `<row>.ppm` and
/// `<row>.randomized.ppm`.
pub fn artifact_report(
    card: &ImageRGB8,
    autoencoders: &[(String, &Autoencoder)],
    jpeg_qualities: &[u8],
    viz_dir: Option<&Path>,
) -> Result<Vec<ArtifactRow>> {
    let mut rows = vec![ArtifactRow::with_transforms("original".into(), card)?];
    let mut images = vec![("original".to_string(), card.clone())];
    for &q in jpeg_qualities {
        let img = jpeg_degrade(card, q).map_err(img_err)?;
        let name = format!("jpeg{q}");
        rows.push(ArtifactRow { name: name.clone(), default: ColorStats::of(&img), jpeg85: None, resize50: None });
        images.push((name, img));
    }
    for (name, ae) in autoencoders {
        let img = ae.reconstruct(card).map_err(|e| EvalError::Validation(e.to_string()))?;
        rows.push(ArtifactRow::with_transforms(name.clone(), &img)?);
        images.push((name.clone(), img));
    }
    if let Some(dir) = viz_dir {
        std::fs::create_dir_all(dir).map_err(|e| EvalError::Io { path: dir.display().to_string(), source: e })?;
        for (name, img) in &images {
            save_ppm(img, dir.join(format!("{name}.ppm"))).map_err(img_err)?;
            let randomized = color_randomize(img, derive_seed(0, name, 0));
            save_ppm(&randomized, dir.join(format!("{name}.randomized.ppm"))).map_err(img_err)?;
        }
    }
    Ok(rows)
}
