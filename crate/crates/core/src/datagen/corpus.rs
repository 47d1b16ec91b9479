use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_scene, sample_resolution, DataError, ResolutionBucket, Result, SceneSpec};
use crate::imaging::{load_ppm, save_ppm, CropSpec, ImageRGB8};
use crate::models::{Autoencoder, DOWNSAMPLE_FACTOR};
use crate::seeds::derive_seed;

pub const MANIFEST_FORMAT: &str = "aeforge-manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Original,
    Reconstructed,
}

impl Label {
    /// Training target: reconstructed crops are the positive class.
    pub fn target(self) -> f32 {
        match self {
            Label::Original => 0.0,
            Label::Reconstructed => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    /// Held-out full images used only for threshold calibration.
    Val,
}

impl Split {
    fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the corpus root, `/`-separated.
    pub path: String,
    pub label: Label,
    pub source: String,
    pub bucket: Option<usize>,
    pub seed: u64,
    pub split: Split,
    /// Path of the original this reconstruction was made from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub high_res: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

impl CorpusManifest {
    /// No duplicate paths, and every reconstruction's origin is present.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.path.as_str()) {
                return Err(DataError::Manifest(format!("duplicate path {}", e.path)));
            }
        }
        for e in &self.entries {
            if let Some(origin) = &e.origin {
                if !seen.contains(origin.as_str()) {
                    return Err(DataError::Manifest(format!("{} names missing origin {origin}", e.path)));
                }
            }
        }
        Ok(())
    }

    pub fn extend(&mut self, other: CorpusManifest) {
        self.entries.extend(other.entries);
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Distinct sources in first-appearance order.
    pub fn sources(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.source) {
                out.push(e.source.clone());
            }
        }
        out
    }

    /// Header line followed by one JSON record per entry.
    pub fn to_ndjson(&self) -> String {
        let mut out = serde_json::to_string(&Header { format: MANIFEST_FORMAT.into() }).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = lines
            .next()
            .ok_or_else(|| DataError::Manifest("empty manifest".into()))
            .and_then(|l| serde_json::from_str(l).map_err(|e| DataError::Manifest(format!("header: {e}"))))?;
        if header.format != MANIFEST_FORMAT {
            return Err(DataError::Manifest(format!("unsupported manifest format {}", header.format)));
        }
        let entries = lines
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| DataError::Manifest(format!("record {}: {e}", i + 1))))
            .collect::<Result<Vec<ManifestEntry>>>()?;
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
        f.write_all(self.to_ndjson().as_bytes()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(f).lines() {
            text.push_str(&line.map_err(|e| io_err(path, e))?);
            text.push('\n');
        }
        Self::from_ndjson(&text)
    }
}

/// An image loaded from the manifest together with its identity and label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub source: String,
    pub label: Label,
    pub image: ImageRGB8,
}

pub fn load_entry_image(root: &Path, entry: &ManifestEntry) -> Result<ImageRGB8> {
    Ok(load_ppm(root.join(&entry.path))?)
}

pub fn load_split(manifest: &CorpusManifest, root: &Path, split: Split) -> Result<Vec<Sample>> {
    manifest
        .split(split)
        .map(|e| {
            Ok(Sample {
                id: e.path.clone(),
                source: e.source.clone(),
                label: e.label,
                image: load_entry_image(root, e)?,
            })
        })
        .collect()
}

fn write_image(root: &Path, rel: &str, image: &ImageRGB8) -> Result<()> {
    let path: PathBuf = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    save_ppm(image, &path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Number of original crops; the corpus holds twice as many entries.
    pub originals: usize,
    pub buckets: Vec<ResolutionBucket>,
    pub weights: Vec<f64>,
    pub crop_size: usize,
    pub seed: u64,
    pub train_fraction: f64,
    /// Scene pixels on each side of a crop that go through the autoencoder
    /// with it. Zero reconstructs the bare crop.
    pub context: usize,
}

/// The window reconstructed around a crop at `(x, y)`: the crop grown by
/// `context` on every side, snapped outward to the latent grid and clipped
/// to the scene. Returns `(x0, y0, width, height)`.
pub fn context_window(x: usize, y: usize, crop: usize, width: usize, height: usize, context: usize) -> (usize, usize, usize, usize) {
    if context == 0 {
        return (x, y, crop, crop);
    }
    let f = DOWNSAMPLE_FACTOR;
    let x0 = x.saturating_sub(context) / f * f;
    let y0 = y.saturating_sub(context) / f * f;
    let x1 = (x + crop + context).div_ceil(f) * f;
    let y1 = (y + crop + context).div_ceil(f) * f;
    (x0, y0, x1.min(width) - x0, y1.min(height) - y0)
}

/// Generates scenes, cuts one random crop from each, writes the original
/// crop, then writes its autoencoder reconstruction. Pairs share a split.
/// With a nonzero `context` the reconstruction is cut from a reconstructed
/// window around the crop, so it carries no artifacts from the crop border.
///
/// Layout: `{train,test}/{original,reconstructed}/NNNNN.ppm` under `root`.
pub fn build_corpus(
    config: &CorpusConfig,
    autoencoder: &Autoencoder,
    ae_source: &str,
    root: &Path,
) -> Result<CorpusManifest> {
    if config.crop_size == 0 || config.crop_size % DOWNSAMPLE_FACTOR != 0 {
        return Err(DataError::Validation(format!(
            "crop size {} must be a positive multiple of the autoencoder downsample factor {DOWNSAMPLE_FACTOR}",
            config.crop_size
        )));
    }
    if config.originals == 0 {
        return Err(DataError::Validation("corpus needs at least one original".into()));
    }
    if !(0.0..=1.0).contains(&config.train_fraction) {
        return Err(DataError::Validation(format!("train fraction {} outside [0,1]", config.train_fraction)));
    }
    let n = config.originals;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "corpus.split", 0)));
    let n_train = (n as f64 * config.train_fraction).round() as usize;
    let mut split_of = vec![Split::Test; n];
    for &i in &order[..n_train] {
        split_of[i] = Split::Train;
    }

    let mut entries = Vec::with_capacity(2 * n);
    const BATCH: usize = 64;
    for start in (0..n).step_by(BATCH) {
        let mut batch = Vec::new();
        for i in start..(start + BATCH).min(n) {
            let mut res_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "corpus.resolution", i as u64));
            let res = sample_resolution(&config.buckets, &config.weights, &mut res_rng)?;
            let (mut w, mut h) = (res.width.max(config.crop_size), res.height.max(config.crop_size));
            if config.context > 0 {
                // windows must be whole latent cells, as full generated images are
                (w, h) = (w / DOWNSAMPLE_FACTOR * DOWNSAMPLE_FACTOR, h / DOWNSAMPLE_FACTOR * DOWNSAMPLE_FACTOR);
            }
            let scene_seed = derive_seed(config.seed, "corpus.scene", i as u64);
            let scene = generate_scene(&SceneSpec::random(scene_seed, w, h))?;
            let spec = CropSpec {
                size: config.crop_size,
                count: 1,
                rng_seed: derive_seed(config.seed, "corpus.crop", i as u64),
            };
            let (x, y) = spec.corners(w, h)?[0];
            let crop = scene.crop(x, y, config.crop_size, config.crop_size)?;
            let dir = split_of[i].dir();
            let original = format!("{dir}/original/{i:05}.ppm");
            write_image(root, &original, &crop)?;
            entries.push(ManifestEntry {
                path: original.clone(),
                label: Label::Original,
                source: "original".into(),
                bucket: Some(res.bucket),
                seed: scene_seed,
                split: split_of[i],
                origin: None,
                high_res: false,
            });
            let (x0, y0, ww, wh) = context_window(x, y, config.crop_size, w, h, config.context);
            let window = scene.crop(x0, y0, ww, wh)?;
            batch.push((i, original, res.bucket, scene_seed, window, (x - x0, y - y0)));
        }
        // originals are on disk before the autoencoder sees any of them
        let recon = if config.context == 0 {
            let crops: Vec<&ImageRGB8> = batch.iter().map(|b| &b.4).collect();
            autoencoder.reconstruct_batch(&crops)?
        } else {
            batch
                .iter()
                .map(|b| {
                    let (cx, cy) = b.5;
                    Ok(autoencoder.reconstruct(&b.4)?.crop(cx, cy, config.crop_size, config.crop_size)?)
                })
                .collect::<Result<Vec<_>>>()?
        };
        for ((i, original, bucket, seed, _, _), image) in batch.into_iter().zip(recon) {
            let path = format!("{}/reconstructed/{i:05}.ppm", split_of[i].dir());
            write_image(root, &path, &image)?;
            entries.push(ManifestEntry {
                path,
                label: Label::Reconstructed,
                source: ae_source.to_string(),
                bucket: Some(bucket),
                seed,
                split: split_of[i],
                origin: Some(original),
                high_res: false,
            });
        }
    }
    let manifest = CorpusManifest { entries };
    manifest.validate()?;
    Ok(manifest)
}

/// A set of full-size images from one source, for evaluation or calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSetSpec {
    pub source: String,
    pub count: usize,
    pub buckets: Vec<ResolutionBucket>,
    pub weights: Vec<f64>,
    pub seed: u64,
    pub split: Split,
    #[serde(default)]
    pub high_res: bool,
}

fn full_image_scene(spec: &ImageSetSpec, stream: &str, i: usize) -> Result<(usize, u64, ImageRGB8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("{stream}.resolution"), i as u64));
    let res = sample_resolution(&spec.buckets, &spec.weights, &mut rng)?;
    let snap = |d: usize| (d / DOWNSAMPLE_FACTOR).max(1) * DOWNSAMPLE_FACTOR;
    let seed = derive_seed(spec.seed, &format!("{stream}.scene"), i as u64);
    let scene = generate_scene(&SceneSpec::random(seed, snap(res.width), snap(res.height)))?;
    Ok((res.bucket, seed, scene))
}

/// Full-size original scenes. Dimensions are snapped down to multiples of 8 so
/// originals and reconstructions share the same size distribution.
pub fn build_original_set(spec: &ImageSetSpec, root: &Path) -> Result<CorpusManifest> {
    let mut entries = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let (bucket, seed, scene) = full_image_scene(spec, &spec.source, i)?;
        let path = format!("{}/{}/{i:05}.ppm", spec.split.dir(), spec.source);
        write_image(root, &path, &scene)?;
        entries.push(ManifestEntry {
            path,
            label: Label::Original,
            source: spec.source.clone(),
            bucket: Some(bucket),
            seed,
            split: spec.split,
            origin: None,
            high_res: spec.high_res,
        });
    }
    Ok(CorpusManifest { entries })
}

/// One autoencoder whose reconstructions form a labeled evaluation source.
#[derive(Debug, Clone)]
pub struct HoldoutSource<'a> {
    pub name: String,
    pub autoencoder: &'a Autoencoder,
    pub buckets: Vec<ResolutionBucket>,
    pub weights: Vec<f64>,
    pub split: Split,
}

impl HoldoutSource<'_> {
    /// `<name>-<first 8 hex digits of the checkpoint hash>`.
    pub fn source_id(&self) -> Result<String> {
        let hash = self.autoencoder.checkpoint_hash()?;
        Ok(format!("{}-{}", self.name, &hash[..8]))
    }
}

/// Reconstructs `count` fresh full-size scenes through each source's
/// autoencoder, labeling every image by its source id.
pub fn build_holdout_generators(
    seed: u64,
    count: usize,
    sources: &[HoldoutSource<'_>],
    root: &Path,
) -> Result<CorpusManifest> {
    if sources.is_empty() {
        return Err(DataError::Config("no holdout autoencoders configured".into()));
    }
    let mut entries = Vec::new();
    let mut ids = HashSet::new();
    for src in sources {
        let id = src.source_id()?;
        if !ids.insert(id.clone()) {
            return Err(DataError::Config(format!("duplicate holdout source {id}")));
        }
        let spec = ImageSetSpec {
            source: id.clone(),
            count,
            buckets: src.buckets.clone(),
            weights: src.weights.clone(),
            seed,
            split: src.split,
            high_res: false,
        };
        for i in 0..count {
            let (bucket, scene_seed, scene) = full_image_scene(&spec, &src.name, i)?;
            let image = src.autoencoder.reconstruct(&scene)?;
            let path = format!("{}/{id}/{i:05}.ppm", src.split.dir());
            write_image(root, &path, &image)?;
            entries.push(ManifestEntry {
                path,
                label: Label::Reconstructed,
                source: id.clone(),
                bucket: Some(bucket),
                seed: scene_seed,
                split: src.split,
                origin: None,
                high_res: false,
            });
        }
    }
    Ok(CorpusManifest { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::AeArch;

    fn tiny_ae(seed: u64) -> Autoencoder {
        Autoencoder::new(AeArch { widths: [4, 4, 4], ..Default::default() }, seed).unwrap()
    }

    fn config(originals: usize) -> CorpusConfig {
        CorpusConfig {
            originals,
            buckets: vec![ResolutionBucket::new(40, 64)],
            weights: vec![1.0],
            crop_size: 16,
            seed: 11,
            train_fraction: 0.75,
            context: 0,
        }
    }

    #[test]
    fn corpus_pairs_and_splits() {
        for context in [0, 24] {
            corpus_pairs_and_splits_with(context);
        }
    }

    fn corpus_pairs_and_splits_with(context: usize) {
        let dir = tempfile::tempdir().unwrap();
        let m = build_corpus(&CorpusConfig { context, ..config(20) }, &tiny_ae(1), "ae-a", dir.path()).unwrap();
        assert_eq!(m.entries.len(), 40);
        let originals = m.entries.iter().filter(|e| e.label == Label::Original).count();
        assert_eq!(originals, 20);
        assert_eq!(m.split(Split::Train).count(), 30);
        assert_eq!(m.split(Split::Test).count(), 10);
        for e in m.entries.iter().filter(|e| e.label == Label::Reconstructed) {
            let origin = m.entries.iter().find(|o| Some(&o.path) == e.origin.as_ref()).unwrap();
            assert_eq!(origin.split, e.split);
            let a = load_entry_image(dir.path(), origin).unwrap();
            let b = load_entry_image(dir.path(), e).unwrap();
            assert_eq!((a.width(), a.height()), (b.width(), b.height()));
        }
    }

    #[test]
    fn context_window_covers_crop_on_grid() {
        for (x, y, w, h) in [(0, 0, 40, 40), (13, 7, 64, 50), (48, 34, 64, 50), (30, 30, 200, 90)] {
            let (x0, y0, ww, wh) = context_window(x, y, 16, w, h, 24);
            assert_eq!((x0 % 8, y0 % 8), (0, 0));
            assert!(x0 <= x && y0 <= y && x + 16 <= x0 + ww && y + 16 <= y0 + wh);
            assert!(x0 + ww <= w && y0 + wh <= h);
            assert!(x - x0 <= 24 + 7 && y - y0 <= 24 + 7);
        }
        assert_eq!(context_window(5, 9, 16, 64, 64, 0), (5, 9, 16, 16));
    }

    #[test]
    fn context_reconstruction_matches_whole_scene() {
        let ae = tiny_ae(4);
        let scene = generate_scene(&SceneSpec::random(3, 88, 72)).unwrap();
        let full = ae.reconstruct(&scene).unwrap();
        for (x, y) in [(0, 0), (37, 21), (72, 56), (8, 50)] {
            let (x0, y0, ww, wh) = context_window(x, y, 16, 88, 72, 24);
            let window = ae.reconstruct(&scene.crop(x0, y0, ww, wh).unwrap()).unwrap();
            assert_eq!(window.crop(x - x0, y - y0, 16, 16).unwrap(), full.crop(x, y, 16, 16).unwrap());
        }
    }

    #[test]
    fn crop_size_must_divide_by_eight() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig { crop_size: 20, ..config(2) };
        assert!(matches!(build_corpus(&cfg, &tiny_ae(1), "ae", dir.path()), Err(DataError::Validation(_))));
    }

    #[test]
    fn manifest_ndjson_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_corpus(&config(4), &tiny_ae(1), "ae-a", dir.path()).unwrap();
        let text = m.to_ndjson();
        assert!(text.starts_with("{\"format\":\"aeforge-manifest/1\"}\n"));
        let back = CorpusManifest::from_ndjson(&text).unwrap();
        assert_eq!(back, m);
        assert!(CorpusManifest::from_ndjson("{\"format\":\"other/9\"}\n").is_err());
    }

    #[test]
    fn duplicate_paths_rejected() {
        let e = ManifestEntry {
            path: "a.ppm".into(),
            label: Label::Original,
            source: "original".into(),
            bucket: None,
            seed: 0,
            split: Split::Train,
            origin: None,
            high_res: false,
        };
        let m = CorpusManifest { entries: vec![e.clone(), e] };
        assert!(m.validate().is_err());
    }

    #[test]
    fn holdouts_count_and_ids() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (tiny_ae(2), Autoencoder::new(AeArch { widths: [4, 4, 4], latent_channels: 8, ..Default::default() }, 3).unwrap());
        let mk = |name: &str, ae| HoldoutSource {
            name: name.into(),
            autoencoder: ae,
            buckets: vec![ResolutionBucket::new(32, 40)],
            weights: vec![1.0],
            split: Split::Test,
        };
        let m = build_holdout_generators(5, 3, &[mk("ae-b", &a), mk("ae-c", &b)], dir.path()).unwrap();
        assert_eq!(m.entries.len(), 6);
        let sources = m.sources();
        assert_eq!(sources.len(), 2);
        assert!(sources[0].starts_with("ae-b-") && sources[1].starts_with("ae-c-"));
        for e in &m.entries {
            let img = load_entry_image(dir.path(), e).unwrap();
            assert_eq!(img.width() % 8, 0);
        }
        assert!(matches!(build_holdout_generators(5, 3, &[], dir.path()), Err(DataError::Config(_))));
    }
}
