//! The end-to-end run: one seeded [`RunConfig`] drives every stage, each stage
//! reads earlier stages' files and writes its own plus a stage manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{
    build_corpus, build_holdout_generators, build_original_set, generate_scene, generate_test_card, load_split,
    CorpusConfig, CorpusManifest, DataError, HoldoutSource, ImageSetSpec, Label, ManifestEntry, ResolutionBucket,
    Sample, SceneSpec, Split,
};
use crate::eval::{
    artifact_report, robustness_sweep, separability, ArtifactRow, EvalError, EvalReport, ReportConfig,
    RobustnessGrid, Transform,
};
use crate::imaging::{save_ppm, ImageError};
use crate::inference::{batch_decide, calibrate_threshold, BatchConfig, Calibration, DecisionTable, InferError};
use crate::models::{AeArch, Activation, Autoencoder, Detector, DetectorArch, ModelError, Normalization};
use crate::seeds::{derive_seed, sha256_hex};
use crate::training::{evaluate_split, train_autoencoder, train_detector, SplitEvaluation, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{missing} not found; run `aeforge {stage}` first")]
    Missing { missing: String, stage: &'static str },
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl PipelineError {
    /// 1 for invalid input or configuration, 2 for file system trouble.
    pub fn exit_code(&self) -> i32 {
        fn io_like(e: &ImageError) -> bool {
            matches!(e, ImageError::Io(_))
        }
        match self {
            PipelineError::Io { .. } | PipelineError::Missing { .. } => 2,
            PipelineError::Data(DataError::Io { .. }) | PipelineError::Eval(EvalError::Io { .. }) => 2,
            PipelineError::Train(TrainError::Io { .. }) => 2,
            PipelineError::Image(e) | PipelineError::Data(DataError::Image(e)) => {
                if io_like(e) {
                    2
                } else {
                    1
                }
            }
            PipelineError::Model(ModelError::Checkpoint(crate::tensor::CheckpointError::Io(_))) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPaths {
    pub corpus_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl RunPaths {
    pub fn under(root: impl AsRef<Path>) -> Self {
        let root = root.as_ref();
        Self {
            corpus_dir: root.join("corpus"),
            checkpoint_dir: root.join("checkpoints"),
            report_dir: root.join("reports"),
        }
    }
}

/// Optimizer settings of one training stage; the seed comes from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub validation_fraction: f64,
}

impl TrainSettings {
    fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            peak_lr: self.peak_lr,
            weight_decay: self.weight_decay,
            warmup_steps: self.warmup_steps,
            seed,
            validation_fraction: self.validation_fraction,
            checkpoint_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderStage {
    pub name: String,
    pub arch: AeArch,
    pub train: TrainSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallSource {
    /// Holdout autoencoder whose reconstructions are used.
    pub autoencoder: String,
    pub bucket: ResolutionBucket,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    /// Size distribution of full images for calibration and evaluation.
    pub buckets: Vec<ResolutionBucket>,
    pub weights: Vec<f64>,
    /// Originals and reconstructions each, for threshold calibration.
    pub calibration_images: usize,
    pub original_images: usize,
    /// Originals drawn from `high_res_bucket` only.
    pub high_res_images: usize,
    pub high_res_bucket: ResolutionBucket,
    /// Images per generating autoencoder.
    pub generated_images: usize,
    /// Extra source of images too small for some transforms.
    pub small_source: Option<SmallSource>,
    pub tries: usize,
    pub fpr_target: f64,
    pub transforms: Vec<Transform>,
    pub card_size: usize,
    pub jpeg_qualities: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,
    pub paths: RunPaths,
    /// Scenes the autoencoders are trained on.
    pub scene_count: usize,
    pub scene_size: usize,
    /// The autoencoder whose reconstructions the detector is trained on.
    pub autoencoder: AutoencoderStage,
    pub holdouts: Vec<AutoencoderStage>,
    pub corpus_originals: usize,
    pub crop_size: usize,
    pub corpus_buckets: Vec<ResolutionBucket>,
    pub corpus_weights: Vec<f64>,
    pub train_fraction: f64,
    /// Scene margin reconstructed along with each corpus crop.
    pub crop_context: usize,
    pub detector: DetectorArch,
    pub detector_train: TrainSettings,
    pub evaluation: EvalSettings,
}

impl RunConfig {
    pub fn profile(name: &str, root: impl AsRef<Path>) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(root)),
            "paper-shape" => Ok(Self::paper_shape(root)),
            "smoke" => Ok(Self::smoke(root)),
            other => Err(PipelineError::Config(format!(
                "unknown profile {other}; expected desk, paper-shape or smoke"
            ))),
        }
    }

    /// 64x64 scenes, 32x32 crops, 2k originals: minutes on one CPU core.
    pub fn desk(root: impl AsRef<Path>) -> Self {
        let ae_train = TrainSettings {
            epochs: 5,
            batch_size: 32,
            peak_lr: 2e-3,
            weight_decay: 0.05,
            warmup_steps: 200,
            validation_fraction: 0.1,
        };
        let holdout_train = TrainSettings { epochs: 3, warmup_steps: 100, ..ae_train.clone() };
        let eval_buckets = vec![
            ResolutionBucket::new(96, 128),
            ResolutionBucket::new(128, 192),
            ResolutionBucket::new(192, 256),
        ];
        Self {
            profile: "desk".into(),
            seed: 7,
            paths: RunPaths::under(root),
            scene_count: 2000,
            scene_size: 64,
            autoencoder: AutoencoderStage { name: "ae-a".into(), arch: AeArch::default(), train: ae_train },
            holdouts: vec![
                AutoencoderStage {
                    name: "ae-b".into(),
                    arch: AeArch { widths: [16, 32, 64], latent_channels: 8, activation: Activation::Silu },
                    train: holdout_train.clone(),
                },
                AutoencoderStage {
                    name: "ae-c".into(),
                    arch: AeArch { widths: [24, 48, 96], latent_channels: 4, activation: Activation::Relu },
                    train: holdout_train,
                },
            ],
            corpus_originals: 2000,
            crop_size: 32,
            corpus_buckets: ResolutionBucket::desk_defaults(),
            corpus_weights: vec![1.0; 6],
            train_fraction: 0.75,
            crop_context: 24,
            detector: DetectorArch::default(),
            detector_train: TrainSettings {
                epochs: 10,
                batch_size: 16,
                peak_lr: 3e-3,
                weight_decay: 0.05,
                warmup_steps: 100,
                validation_fraction: 0.1,
            },
            evaluation: EvalSettings {
                weights: vec![1.0; eval_buckets.len()],
                buckets: eval_buckets,
                calibration_images: 200,
                original_images: 200,
                high_res_images: 20,
                high_res_bucket: ResolutionBucket::new(384, 512),
                generated_images: 100,
                small_source: Some(SmallSource {
                    autoencoder: "ae-b".into(),
                    bucket: ResolutionBucket::new(64, 64),
                    images: 30,
                }),
                tries: 10,
                fpr_target: 0.001,
                transforms: Transform::standard_grid(),
                card_size: 256,
                jpeg_qualities: vec![100, 95, 75, 50],
            },
        }
    }

    /// 256x256 crops and the full-scale schedule. Runnable, but slow on CPU
    /// and not expected to reach any particular number.
    pub fn paper_shape(root: impl AsRef<Path>) -> Self {
        let mut c = Self::desk(root);
        c.profile = "paper-shape".into();
        c.scene_size = 256;
        c.crop_size = 256;
        c.corpus_buckets = ResolutionBucket::paper_scale().into_iter().filter(|b| b.min_side >= 256).collect();
        c.corpus_weights = vec![1.0; c.corpus_buckets.len()];
        for stage in std::iter::once(&mut c.autoencoder).chain(c.holdouts.iter_mut()) {
            stage.train.epochs = 10;
            stage.train.warmup_steps = 500;
        }
        c.detector_train.epochs = 10;
        c.detector_train.warmup_steps = 500;
        let e = &mut c.evaluation;
        e.buckets = vec![ResolutionBucket::new(512, 768), ResolutionBucket::new(768, 1024)];
        e.weights = vec![1.0; 2];
        e.high_res_bucket = ResolutionBucket::new(2560, 3000);
        e.small_source = Some(SmallSource {
            autoencoder: "ae-b".into(),
            bucket: ResolutionBucket::new(256, 256),
            images: 30,
        });
        e.card_size = 1024;
        c
    }

    /// A seconds-scale run through every stage with tiny models.
    pub fn smoke(root: impl AsRef<Path>) -> Self {
        let train = TrainSettings {
            epochs: 2,
            batch_size: 8,
            peak_lr: 2e-3,
            weight_decay: 0.05,
            warmup_steps: 2,
            validation_fraction: 0.2,
        };
        let mut c = Self::desk(root);
        c.profile = "smoke".into();
        c.scene_count = 24;
        c.scene_size = 32;
        c.autoencoder.arch = AeArch { widths: [4, 8, 8], latent_channels: 4, activation: Activation::Silu };
        c.autoencoder.train = train.clone();
        c.holdouts.truncate(1);
        c.holdouts[0].arch = AeArch { widths: [4, 4, 8], latent_channels: 8, activation: Activation::Relu };
        c.holdouts[0].train = train.clone();
        c.corpus_originals = 24;
        c.crop_size = 16;
        c.corpus_buckets = vec![ResolutionBucket::new(32, 48)];
        c.corpus_weights = vec![1.0];
        c.detector = DetectorArch { widths: [4, 4, 8, 8] };
        c.detector_train = train;
        let e = &mut c.evaluation;
        e.buckets = vec![ResolutionBucket::new(40, 48)];
        e.weights = vec![1.0];
        e.calibration_images = 6;
        e.original_images = 6;
        e.high_res_images = 2;
        e.high_res_bucket = ResolutionBucket::new(64, 72);
        e.generated_images = 4;
        e.small_source = Some(SmallSource {
            autoencoder: "ae-b".into(),
            bucket: ResolutionBucket::new(24, 24),
            images: 3,
        });
        e.card_size = 32;
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.scene_count == 0 || self.corpus_originals == 0 {
            return bad("scene and corpus counts must be positive".into());
        }
        if self.scene_size % crate::models::DOWNSAMPLE_FACTOR != 0 || self.scene_size == 0 {
            return bad(format!("scene size {} must be a positive multiple of 8", self.scene_size));
        }
        if self.corpus_buckets.iter().any(|b| b.min_side < self.crop_size) {
            return bad(format!("every corpus bucket must admit a {}px crop", self.crop_size));
        }
        let mut names: Vec<&str> = self.autoencoders().map(|a| a.name.as_str()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("autoencoder names must be distinct".into());
        }
        let e = &self.evaluation;
        if e.buckets.iter().any(|b| b.min_side < self.crop_size) {
            return bad(format!("every evaluation bucket must admit a {}px crop", self.crop_size));
        }
        if let Some(s) = &e.small_source {
            if !self.holdouts.iter().any(|h| h.name == s.autoencoder) {
                return bad(format!("small source names unknown holdout {}", s.autoencoder));
            }
        }
        if e.tries == 0 || !(0.0..1.0).contains(&e.fpr_target) {
            return bad("tries must be positive and fpr_target in [0,1)".into());
        }
        Ok(())
    }

    pub fn autoencoders(&self) -> impl Iterator<Item = &AutoencoderStage> {
        std::iter::once(&self.autoencoder).chain(&self.holdouts)
    }

    fn scenes_dir(&self) -> PathBuf {
        self.paths.corpus_dir.join("scenes")
    }

    fn crops_dir(&self) -> PathBuf {
        self.paths.corpus_dir.join("crops")
    }

    fn images_dir(&self) -> PathBuf {
        self.paths.corpus_dir.join("images")
    }

    pub fn ae_checkpoint(&self, name: &str) -> PathBuf {
        self.paths.checkpoint_dir.join(format!("{name}.aefg"))
    }

    pub fn detector_checkpoint(&self) -> PathBuf {
        self.paths.checkpoint_dir.join("detector.aefg")
    }

    pub fn report_path(&self) -> PathBuf {
        self.paths.report_dir.join("report.json")
    }

    pub fn crop_manifest_path(&self) -> PathBuf {
        self.crops_dir().join("manifest.jsonl")
    }

    pub fn image_manifest_path(&self) -> PathBuf {
        self.images_dir().join("manifest.jsonl")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenData,
    TrainAe,
    BuildCorpus,
    TrainDetector,
    Calibrate,
    Robustness,
    Artifacts,
    Eval,
}

impl Stage {
    /// Execution order of a full run.
    pub const ALL: [Stage; 8] = [
        Stage::GenData,
        Stage::TrainAe,
        Stage::BuildCorpus,
        Stage::TrainDetector,
        Stage::Calibrate,
        Stage::Robustness,
        Stage::Artifacts,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::TrainAe => "train-ae",
            Stage::BuildCorpus => "build-corpus",
            Stage::TrainDetector => "train-detector",
            Stage::Calibrate => "calibrate",
            Stage::Robustness => "robustness",
            Stage::Artifacts => "artifacts",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a stage read and wrote, enough to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub profile: String,
    pub seed: u64,
    /// The full configuration the stage ran with.
    pub config: RunConfig,
    /// Path to sha256 of each input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub duration_ms: u128,
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| io_err(path, e))?))
}

fn require(path: &Path, stage: Stage) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::Missing {
            missing: path.display().to_string(),
            stage: stage.name(),
        })
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: Stage) -> Result<T> {
    require(path, stage)?;
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

struct StageRecorder<'a> {
    config: &'a RunConfig,
    stage: Stage,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl<'a> StageRecorder<'a> {
    fn new(config: &'a RunConfig, stage: Stage) -> Self {
        log::info!("stage {stage} ({} profile, seed {})", config.profile, config.seed);
        Self { config, stage, started: Instant::now(), inputs: Vec::new(), outputs: Vec::new() }
    }

    fn input(&mut self, path: PathBuf) {
        self.inputs.push(path);
    }

    fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    fn finish(self) -> Result<StageManifest> {
        let hashes = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            paths.iter().map(|p| Ok((p.display().to_string(), hash_file(p)?))).collect()
        };
        let manifest = StageManifest {
            stage: self.stage,
            profile: self.config.profile.clone(),
            seed: self.config.seed,
            config: self.config.clone(),
            inputs: hashes(&self.inputs)?,
            outputs: hashes(&self.outputs)?,
            duration_ms: self.started.elapsed().as_millis(),
        };
        let path = self.config.paths.report_dir.join("stages").join(format!("{}.json", self.stage));
        write_json(&path, &manifest)?;
        log::info!("stage {} done in {} ms", self.stage, manifest.duration_ms);
        Ok(manifest)
    }
}

pub fn run_stage(config: &RunConfig, stage: Stage) -> Result<StageManifest> {
    config.validate()?;
    match stage {
        Stage::GenData => gen_data(config),
        Stage::TrainAe => train_aes(config),
        Stage::BuildCorpus => build_corpora(config),
        Stage::TrainDetector => train_detector_stage(config),
        Stage::Calibrate => calibrate(config).map(|(m, _)| m),
        Stage::Robustness => robustness(config),
        Stage::Artifacts => artifacts(config),
        Stage::Eval => evaluate(config).map(|(m, _)| m),
    }
}

/// Every stage in order; returns the final report.
pub fn run_all(config: &RunConfig) -> Result<EvalReport> {
    for stage in Stage::ALL {
        run_stage(config, stage)?;
    }
    Ok(EvalReport::load(config.report_path())?)
}

fn gen_data(config: &RunConfig) -> Result<StageManifest> {
    let mut rec = StageRecorder::new(config, Stage::GenData);
    let dir = config.scenes_dir();
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut entries = Vec::with_capacity(config.scene_count);
    for i in 0..config.scene_count {
        let seed = derive_seed(config.seed, "scenes", i as u64);
        let scene = generate_scene(&SceneSpec::random(seed, config.scene_size, config.scene_size))?;
        let path = format!("{i:05}.ppm");
        save_ppm(&scene, dir.join(&path))?;
        entries.push(ManifestEntry {
            path,
            label: Label::Original,
            source: "scene".into(),
            bucket: None,
            seed,
            split: Split::Train,
            origin: None,
            high_res: false,
        });
    }
    let manifest_path = dir.join("manifest.jsonl");
    CorpusManifest { entries }.save(&manifest_path)?;
    rec.output(manifest_path);
    rec.finish()
}

fn train_aes(config: &RunConfig) -> Result<StageManifest> {
    let mut rec = StageRecorder::new(config, Stage::TrainAe);
    let dir = config.scenes_dir();
    let manifest_path = dir.join("manifest.jsonl");
    require(&manifest_path, Stage::GenData)?;
    rec.input(manifest_path.clone());
    let scenes = load_split(&CorpusManifest::load(&manifest_path)?, &dir, Split::Train)?;
    for stage in config.autoencoders() {
        log::info!("training autoencoder {} {:?}", stage.name, stage.arch);
        let init = Autoencoder::new(stage.arch, derive_seed(config.seed, &format!("{}.init", stage.name), 0))?;
        let train = stage.train.to_config(derive_seed(config.seed, &format!("{}.train", stage.name), 0));
        let (ae, history) = train_autoencoder(init, &scenes, &train)?;
        let ckpt = config.ae_checkpoint(&stage.name);
        std::fs::create_dir_all(&config.paths.checkpoint_dir).map_err(|e| io_err(&config.paths.checkpoint_dir, e))?;
        ae.save(&ckpt)?;
        let hist_dir = config.paths.report_dir.join("history");
        std::fs::create_dir_all(&hist_dir).map_err(|e| io_err(&hist_dir, e))?;
        let csv = hist_dir.join(format!("{}.csv", stage.name));
        history.write_csv(&csv)?;
        let summary = hist_dir.join(format!("{}.json", stage.name));
        write_text(&summary, &history.summary_json())?;
        rec.output(ckpt);
        rec.output(csv);
        rec.output(summary);
    }
    rec.finish()
}

fn load_ae(config: &RunConfig, name: &str) -> Result<Autoencoder> {
    let path = config.ae_checkpoint(name);
    require(&path, Stage::TrainAe)?;
    Ok(Autoencoder::load(&path)?)
}

fn build_corpora(config: &RunConfig) -> Result<StageManifest> {
    let mut rec = StageRecorder::new(config, Stage::BuildCorpus);
    let main = load_ae(config, &config.autoencoder.name)?;
    let holdouts = config
        .holdouts
        .iter()
        .map(|h| Ok((h.name.clone(), load_ae(config, &h.name)?)))
        .collect::<Result<Vec<_>>>()?;
    for stage in config.autoencoders() {
        rec.input(config.ae_checkpoint(&stage.name));
    }

    let crops_dir = config.crops_dir();
    let corpus = build_corpus(
        &CorpusConfig {
            originals: config.corpus_originals,
            buckets: config.corpus_buckets.clone(),
            weights: config.corpus_weights.clone(),
            crop_size: config.crop_size,
            seed: derive_seed(config.seed, "corpus", 0),
            train_fraction: config.train_fraction,
            context: config.crop_context,
        },
        &main,
        &config.autoencoder.name,
        &crops_dir,
    )?;
    corpus.save(config.crop_manifest_path())?;
    rec.output(config.crop_manifest_path());

    let e = &config.evaluation;
    let images_dir = config.images_dir();
    let originals = |source: &str, count, buckets: Vec<ResolutionBucket>, split, high_res| {
        let weights = vec![1.0; buckets.len()];
        build_original_set(
            &ImageSetSpec {
                source: source.into(),
                count,
                buckets,
                weights,
                seed: derive_seed(config.seed, &format!("{split:?}.{source}"), 0),
                split,
                high_res,
            },
            &images_dir,
        )
    };
    let mut images = originals("original", e.calibration_images, e.buckets.clone(), Split::Val, false)?;
    let source = |name: &str, ae, buckets: Vec<ResolutionBucket>, split| HoldoutSource {
        name: name.to_string(),
        autoencoder: ae,
        weights: vec![1.0; buckets.len()],
        buckets,
        split,
    };
    images.extend(build_holdout_generators(
        derive_seed(config.seed, "val.generated", 0),
        e.calibration_images,
        &[source(&config.autoencoder.name, &main, e.buckets.clone(), Split::Val)],
        &images_dir,
    )?);
    images.extend(originals("original", e.original_images, e.buckets.clone(), Split::Test, false)?);
    images.extend(originals("original-high-res", e.high_res_images, vec![e.high_res_bucket], Split::Test, true)?);
    let mut generators = vec![source(&config.autoencoder.name, &main, e.buckets.clone(), Split::Test)];
    for (name, ae) in &holdouts {
        generators.push(source(name, ae, e.buckets.clone(), Split::Test));
    }
    images.extend(build_holdout_generators(
        derive_seed(config.seed, "test.generated", 0),
        e.generated_images,
        &generators,
        &images_dir,
    )?);
    if let Some(small) = &e.small_source {
        let ae = &holdouts.iter().find(|(n, _)| *n == small.autoencoder).expect("validated").1;
        images.extend(build_holdout_generators(
            derive_seed(config.seed, "test.small", 0),
            small.images,
            &[source(&format!("{}-small", small.autoencoder), ae, vec![small.bucket], Split::Test)],
            &images_dir,
        )?);
    }
    images.validate()?;
    images.save(config.image_manifest_path())?;
    rec.output(config.image_manifest_path());
    rec.finish()
}

fn train_detector_stage(config: &RunConfig) -> Result<StageManifest> {
    let mut rec = StageRecorder::new(config, Stage::TrainDetector);
    let manifest_path = config.crop_manifest_path();
    require(&manifest_path, Stage::BuildCorpus)?;
    rec.input(manifest_path.clone());
    let manifest = CorpusManifest::load(&manifest_path)?;
    let root = config.crops_dir();
    let train = load_split(&manifest, &root, Split::Train)?;
    let test = load_split(&manifest, &root, Split::Test)?;
    let norm = Normalization::from_images(train.iter().map(|s| &s.image));
    let init = Detector::new(config.detector, config.crop_size, norm, derive_seed(config.seed, "detector.init", 0))?;
    let (detector, history) =
        train_detector(init, &train, &config.detector_train.to_config(derive_seed(config.seed, "detector.train", 0)))?;
    audit_no_test_samples(&history.trained_ids, &test)?;
    let ckpt = config.detector_checkpoint();
    std::fs::create_dir_all(&config.paths.checkpoint_dir).map_err(|e| io_err(&config.paths.checkpoint_dir, e))?;
    detector.save(&ckpt)?;
    let hist_dir = config.paths.report_dir.join("history");
    std::fs::create_dir_all(&hist_dir).map_err(|e| io_err(&hist_dir, e))?;
    history.write_csv(hist_dir.join("detector.csv"))?;
    write_text(&hist_dir.join("detector.json"), &history.summary_json())?;
    let crop_test = evaluate_split(&detector, &test, config.detector_train.batch_size)?;
    log::info!("crop-level test accuracy {:?}", crop_test.accuracy);
    let out = config.paths.report_dir.join("crop_test.json");
    write_json(&out, &crop_test)?;
    rec.output(ckpt);
    rec.output(out);
    rec.finish()
}

fn audit_no_test_samples(trained: &[String], test: &[Sample]) -> Result<()> {
    if let Some(s) = test.iter().find(|s| trained.binary_search(&s.id).is_ok()) {
        return Err(PipelineError::Config(format!("test sample {} was used for training", s.id)));
    }
    Ok(())
}

fn load_detector(config: &RunConfig) -> Result<Detector> {
    let path = config.detector_checkpoint();
    require(&path, Stage::TrainDetector)?;
    Ok(Detector::load(&path)?)
}

fn image_entries(config: &RunConfig, split: Split) -> Result<Vec<ManifestEntry>> {
    let path = config.image_manifest_path();
    require(&path, Stage::BuildCorpus)?;
    Ok(CorpusManifest::load(&path)?.split(split).cloned().collect())
}

fn calibration_path(config: &RunConfig) -> PathBuf {
    config.paths.report_dir.join("calibration.json")
}

/// Calibration stage; also returns the threshold.
pub fn calibrate(config: &RunConfig) -> Result<(StageManifest, Calibration)> {
    let mut rec = StageRecorder::new(config, Stage::Calibrate);
    let detector = load_detector(config)?;
    let entries = image_entries(config, Split::Val)?;
    rec.input(config.detector_checkpoint());
    rec.input(config.image_manifest_path());
    let refs: Vec<&ManifestEntry> = entries.iter().collect();
    let batch = BatchConfig::new(config.crop_size, config.evaluation.tries, 0.5, derive_seed(config.seed, "val", 0));
    let table = batch_decide(&refs, &config.images_dir(), &detector, &batch)?;
    let scores = |label| table.items.iter().filter(|i| i.label == label).map(|i| i.multi).collect::<Vec<_>>();
    let cal = calibrate_threshold(&scores(Label::Original), &scores(Label::Reconstructed), config.evaluation.fpr_target)?;
    log::info!("calibrated threshold {} (FPR {}, recall {})", cal.threshold, cal.fpr, cal.recall);
    let out = calibration_path(config);
    write_json(&out, &cal)?;
    let scores_path = config.paths.report_dir.join("val_decisions.json");
    write_json(&scores_path, &table)?;
    rec.output(out);
    rec.output(scores_path);
    Ok((rec.finish()?, cal))
}

fn eval_batch_config(config: &RunConfig, cal: &Calibration) -> Result<BatchConfig> {
    let b = BatchConfig::new(config.crop_size, config.evaluation.tries, cal.threshold, derive_seed(config.seed, "test", 0));
    b.multi.validate().map_err(|e| {
        PipelineError::Config(format!("calibrated threshold is unusable ({e}); the detector saturates on originals"))
    })?;
    Ok(b)
}

fn robustness_path(config: &RunConfig) -> PathBuf {
    config.paths.report_dir.join("robustness.json")
}

fn artifacts_path(config: &RunConfig) -> PathBuf {
    config.paths.report_dir.join("artifacts.json")
}

fn robustness(config: &RunConfig) -> Result<StageManifest> {
    let mut rec = StageRecorder::new(config, Stage::Robustness);
    let detector = load_detector(config)?;
    let cal: Calibration = read_json(&calibration_path(config), Stage::Calibrate)?;
    let entries = image_entries(config, Split::Test)?;
    rec.input(config.detector_checkpoint());
    rec.input(calibration_path(config));
    rec.input(config.image_manifest_path());
    let refs: Vec<&ManifestEntry> = entries.iter().collect();
    let batch = eval_batch_config(config, &cal)?;
    let grid = robustness_sweep(&refs, &config.images_dir(), &detector, &batch, &config.evaluation.transforms)?;
    let out = robustness_path(config);
    write_json(&out, &grid)?;
    rec.output(out);
    rec.finish()
}

fn artifacts(config: &RunConfig) -> Result<StageManifest> {
    let mut rec = StageRecorder::new(config, Stage::Artifacts);
    let e = &config.evaluation;
    let card = generate_test_card(derive_seed(config.seed, "card", 0), e.card_size, e.card_size)?;
    let mut aes = Vec::new();
    for stage in config.autoencoders() {
        rec.input(config.ae_checkpoint(&stage.name));
        aes.push((stage.name.clone(), load_ae(config, &stage.name)?));
    }
    let refs: Vec<(String, &Autoencoder)> = aes.iter().map(|(n, a)| (n.clone(), a)).collect();
    let viz = config.paths.report_dir.join("artifacts");
    let rows = artifact_report(&card, &refs, &e.jpeg_qualities, Some(&viz))?;
    let out = artifacts_path(config);
    write_json(&out, &rows)?;
    rec.output(out);
    rec.finish()
}

/// Evaluation stage: image-level decisions on the test images, composed with
/// every earlier stage's results into the final report.
pub fn evaluate(config: &RunConfig) -> Result<(StageManifest, EvalReport)> {
    let mut rec = StageRecorder::new(config, Stage::Eval);
    let detector = load_detector(config)?;
    let cal: Calibration = read_json(&calibration_path(config), Stage::Calibrate)?;
    let crop_test: SplitEvaluation = read_json(&config.paths.report_dir.join("crop_test.json"), Stage::TrainDetector)?;
    let entries = image_entries(config, Split::Test)?;
    rec.input(config.detector_checkpoint());
    rec.input(calibration_path(config));
    rec.input(config.image_manifest_path());
    let refs: Vec<&ManifestEntry> = entries.iter().collect();
    let table: DecisionTable = batch_decide(&refs, &config.images_dir(), &detector, &eval_batch_config(config, &cal)?)?;
    let decisions_path = config.paths.report_dir.join("decisions.json");
    write_json(&decisions_path, &table)?;

    let mut autoencoders = BTreeMap::new();
    for stage in config.autoencoders() {
        let path = config.ae_checkpoint(&stage.name);
        require(&path, Stage::TrainAe)?;
        autoencoders.insert(stage.name.clone(), hash_file(&path)?);
    }
    let mut report = EvalReport::new(ReportConfig {
        profile: config.profile.clone(),
        seed: config.seed,
        crop_size: config.crop_size,
        tries: config.evaluation.tries,
        one_try_threshold: table.one_try.threshold,
        multi_threshold: table.multi.threshold,
        fpr_target: config.evaluation.fpr_target,
        transforms: config.evaluation.transforms.iter().map(|t| t.to_string()).collect(),
        detector_hash: hash_file(&config.detector_checkpoint())?,
        autoencoders,
    });
    report.crop_test = Some(crop_test);
    report.calibration = Some(cal);
    report.separability = separability(&table, config.evaluation.fpr_target)?;
    report.decisions = table.rows;
    if robustness_path(config).exists() {
        rec.input(robustness_path(config));
        report.robustness = Some(read_json::<RobustnessGrid>(&robustness_path(config), Stage::Robustness)?);
    }
    if artifacts_path(config).exists() {
        rec.input(artifacts_path(config));
        report.artifacts = Some(read_json::<Vec<ArtifactRow>>(&artifacts_path(config), Stage::Artifacts)?);
    }
    let out = config.report_path();
    report.save(&out)?;
    let tables = config.paths.report_dir.join("tables");
    report.write_csv_tables(&tables)?;
    rec.output(out);
    rec.output(decisions_path);
    Ok((rec.finish()?, report))
}

/// Human-readable summary of a checkpoint: kind, architecture, size, hash.
pub fn model_info(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let hash = sha256_hex(&bytes);
    if let Ok(ae) = Autoencoder::from_checkpoint_bytes(&bytes) {
        let a = ae.arch();
        return Ok(format!(
            "kind: autoencoder\nwidths: {:?}\nlatent_channels: {}\nactivation: {:?}\nparameters: {}\nsha256: {hash}\n",
            a.widths,
            a.latent_channels,
            a.activation,
            ae.params().numel()
        ));
    }
    let det = Detector::from_checkpoint_bytes(&bytes)?;
    let n = det.normalization();
    Ok(format!(
        "kind: detector\nwidths: {:?}\ncrop_size: {}\nnorm_mean: {:?}\nnorm_std: {:?}\nparameters: {}\nsha256: {hash}\n",
        det.arch().widths,
        det.crop_size(),
        n.mean,
        n.std,
        det.params().numel()
    ))
}
