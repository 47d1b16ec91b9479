//! Procedural stand-ins for a web-scale image corpus: resolution-bucketed
//! scenes, the black-and-white test card, and paired original/reconstructed
//! crop datasets written to disk with an NDJSON manifest.

mod corpus;
mod scene;

pub use corpus::{
    build_corpus, build_holdout_generators, build_original_set, load_entry_image, load_split,
    CorpusConfig, CorpusManifest, HoldoutSource, ImageSetSpec, Label, ManifestEntry, Sample, Split,
    MANIFEST_FORMAT,
};
pub use scene::{generate_scene, generate_test_card, SceneSpec, Texture};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::ImageError;
use crate::models::ModelError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid data configuration: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest error: {0}")]
    Manifest(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Inclusive range of the sampled (width) side length, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionBucket {
    pub min_side: usize,
    pub max_side: usize,
}

impl ResolutionBucket {
    pub const fn new(min_side: usize, max_side: usize) -> Self {
        Self { min_side, max_side }
    }

    /// Desk-scale buckets (smallest side never drops below a 32 px crop).
    pub fn desk_defaults() -> Vec<Self> {
        [(64, 96), (96, 128), (128, 192), (192, 256), (256, 384), (384, 512)]
            .into_iter()
            .map(|(a, b)| Self::new(a, b))
            .collect()
    }

    /// The eleven ranges listed for the full-scale corpus.
    pub fn paper_scale() -> Vec<Self> {
        [
            (224, 300),
            (300, 400),
            (400, 500),
            (600, 700),
            (800, 900),
            (900, 1000),
            (1000, 1500),
            (1500, 2000),
            (2000, 2500),
            (3000, 3500),
            (4000, 6000),
        ]
        .into_iter()
        .map(|(a, b)| Self::new(a, b))
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampledResolution {
    pub bucket: usize,
    pub width: usize,
    pub height: usize,
}

/// Weighted bucket draw, then a uniform width inside the bucket and a height
/// from an aspect ratio uniform in `[3/4, 4/3]`.
pub fn sample_resolution<R: Rng>(
    buckets: &[ResolutionBucket],
    weights: &[f64],
    rng: &mut R,
) -> Result<SampledResolution> {
    if buckets.is_empty() {
        return Err(DataError::Validation("no resolution buckets".into()));
    }
    if weights.len() != buckets.len() {
        return Err(DataError::Validation(format!(
            "{} weights for {} buckets",
            weights.len(),
            buckets.len()
        )));
    }
    if let Some(b) = buckets.iter().find(|b| b.min_side == 0 || b.max_side < b.min_side) {
        return Err(DataError::Validation(format!("invalid bucket {b:?}")));
    }
    let index = WeightedIndex::new(weights)
        .map_err(|e| DataError::Validation(format!("bucket weights: {e}")))?;
    let bucket = index.sample(rng);
    let b = buckets[bucket];
    let width = rng.gen_range(b.min_side..=b.max_side);
    let aspect = rng.gen_range(0.75..=4.0 / 3.0);
    let height = ((width as f64 * aspect).round() as usize).max(1);
    Ok(SampledResolution { bucket, width, height })
}
