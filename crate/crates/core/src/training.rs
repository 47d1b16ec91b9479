//! Training loops for the surrogate autoencoder (MSE) and the crop detector
//! (BCE with logits), sharing one seeded AdamW + warmup/cosine loop.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{Label, Sample};
use crate::eval::{metrics, ConfusionCounts, Metrics};
use crate::models::{images_to_tensor, Autoencoder, Detector, ModelError, Normalization, DOWNSAMPLE_FACTOR};
use crate::seeds::derive_seed;
use crate::tensor::{AdamW, AdamWConfig, Graph, LrSchedule, ParamSet, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Validation(String),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { epoch: usize, step: u64, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub seed: u64,
    /// Share of the training samples held back for checkpoint selection.
    pub validation_fraction: f64,
    /// Where the best-validation checkpoint is written, if anywhere.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            peak_lr: 1e-3,
            weight_decay: 0.05,
            warmup_steps: 200,
            seed: 7,
            validation_fraction: 0.1,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, train_len: usize) -> u64 {
        train_len.div_ceil(self.batch_size.max(1)) as u64
    }

    fn validate(&self, train_len: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Validation(format!(
                "epochs ({}) and batch size ({}) must be at least 1",
                self.epochs, self.batch_size
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(TrainError::Validation(format!(
                "validation fraction {} outside (0,1)",
                self.validation_fraction
            )));
        }
        let total = self.epochs as u64 * self.steps_per_epoch(train_len);
        if self.warmup_steps >= total {
            return Err(TrainError::Validation(format!(
                "warmup of {} steps does not fit in {total} total steps",
                self.warmup_steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Detector only.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub step_losses: Vec<f64>,
    pub lr_trace: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    /// Every sample id that contributed to a gradient step, sorted.
    pub trained_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    pub checkpoint_hash: String,
}

#[derive(Serialize)]
struct HistorySummary<'a> {
    steps: usize,
    epochs: &'a [EpochRecord],
    best_epoch: usize,
    trained_samples: usize,
    validation_samples: usize,
    checkpoint_hash: &'a str,
}

impl TrainHistory {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "lr", "loss"])?;
        for (i, (lr, loss)) in self.lr_trace.iter().zip(&self.step_losses).enumerate() {
            w.write_record([(i + 1).to_string(), lr.to_string(), loss.to_string()])?;
        }
        w.flush().map_err(|e| TrainError::Csv(e.into()))?;
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        let s = HistorySummary {
            steps: self.step_losses.len(),
            epochs: &self.epochs,
            best_epoch: self.best_epoch,
            trained_samples: self.trained_ids.len(),
            validation_samples: self.validation_ids.len(),
            checkpoint_hash: &self.checkpoint_hash,
        };
        serde_json::to_string_pretty(&s).expect("summary serializes")
    }
}

/// A model the shared loop can optimize.
trait Trainable: Clone {
    fn params(&self) -> &ParamSet<f32>;
    fn params_mut(&mut self) -> &mut ParamSet<f32>;
    fn batch_loss(&self, g: &mut Graph<f32>, vars: &[Var], batch: &[&Sample]) -> Result<Var>;
    /// Mean validation loss and, for classifiers, accuracy.
    fn evaluate(&self, samples: &[&Sample], batch_size: usize) -> Result<(f64, Option<f64>)>;
    fn save(&self, path: &Path) -> Result<String>;
    fn checkpoint_hash(&self) -> Result<String>;
    const CHECKPOINT: &'static str;
}

fn improves(new: (f64, Option<f64>), best: (f64, Option<f64>)) -> bool {
    match (new.1, best.1) {
        (Some(a), Some(b)) if a != b => a > b,
        _ => new.0 < best.0,
    }
}

fn tensor_failure(epoch: usize, step: u64, e: TrainError) -> TrainError {
    match e {
        TrainError::Tensor(TensorError::NonFinite { op }) | TrainError::Model(ModelError::Tensor(TensorError::NonFinite { op })) => {
            TrainError::Diverged { epoch, step, detail: format!("non-finite value in {op}") }
        }
        other => other,
    }
}

/// Seeded split of `samples` into (train, validation).
fn holdout<'a>(samples: &'a [Sample], config: &TrainConfig) -> (Vec<&'a Sample>, Vec<&'a Sample>) {
    let mut order: Vec<&Sample> = samples.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "train.validation", 0)));
    let n_val = ((samples.len() as f64 * config.validation_fraction).round() as usize).clamp(1, samples.len() - 1);
    let train = order.split_off(n_val);
    (train, order)
}

fn fit<M: Trainable>(mut model: M, samples: &[Sample], config: &TrainConfig) -> Result<(M, TrainHistory)> {
    if samples.len() < 2 {
        return Err(TrainError::Validation(format!("need at least 2 samples, got {}", samples.len())));
    }
    let (train, val) = holdout(samples, config);
    config.validate(train.len())?;
    let steps_per_epoch = config.steps_per_epoch(train.len());
    let total = config.epochs as u64 * steps_per_epoch;
    let schedule = LrSchedule::new(config.warmup_steps, total, config.peak_lr)?;
    let mut optim = AdamW::new(AdamWConfig { weight_decay: config.weight_decay, ..Default::default() }, model.params());

    let mut history = TrainHistory {
        step_losses: Vec::with_capacity(total as usize),
        lr_trace: Vec::with_capacity(total as usize),
        epochs: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        trained_ids: Vec::new(),
        validation_ids: val.iter().map(|s| s.id.clone()).collect(),
        checkpoint_hash: String::new(),
    };
    history.validation_ids.sort();
    let mut trained = BTreeSet::new();
    let mut best: Option<((f64, Option<f64>), M)> = None;
    let mut step = 0u64;

    for epoch in 1..=config.epochs {
        let mut order = train.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "train.shuffle", epoch as u64)));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let lr = schedule.lr_at_step(step + 1);
            let mut g = Graph::new();
            let vars = model.params().bind(&mut g);
            let loss = model
                .batch_loss(&mut g, &vars, batch)
                .and_then(|l| {
                    let value = g.value(l).data()[0] as f64;
                    Ok((value, g.backward(l)?))
                })
                .map_err(|e| tensor_failure(epoch, step + 1, e));
            let (value, grads) = loss?;
            if !value.is_finite() {
                return Err(TrainError::Diverged { epoch, step: step + 1, detail: format!("loss {value}") });
            }
            model.params_mut().absorb_grads(&grads, &vars)?;
            optim.step(model.params_mut(), lr)?;
            for s in batch {
                if trained.insert(s.id.clone()) {
                    log::trace!("trained on {}", s.id);
                }
            }
            step += 1;
            history.step_losses.push(value);
            history.lr_trace.push(lr);
            epoch_loss += value * batch.len() as f64;
        }
        model.params_mut().zero_grads();
        let train_loss = epoch_loss / train.len() as f64;
        let (val_loss, val_accuracy) = model.evaluate(&val, config.batch_size)?;
        log::info!(
            "epoch {epoch}/{}: train loss {train_loss:.6}, val loss {val_loss:.6}{}",
            config.epochs,
            val_accuracy.map(|a| format!(", val acc {a:.4}")).unwrap_or_default()
        );
        history.epochs.push(EpochRecord { epoch, train_loss, val_loss, val_accuracy });
        let score = (val_loss, val_accuracy);
        if best.as_ref().is_none_or(|(b, _)| improves(score, *b)) {
            history.best_epoch = epoch;
            best = Some((score, model.clone()));
        }
    }
    let (_, best) = best.expect("at least one epoch ran");
    history.trained_ids = trained.into_iter().collect();
    history.checkpoint_hash = match &config.checkpoint_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| TrainError::Io { path: dir.display().to_string(), source: e })?;
            best.save(&dir.join(M::CHECKPOINT))?
        }
        None => best.checkpoint_hash()?,
    };
    Ok((best, history))
}

fn same_size(samples: &[Sample]) -> Result<(usize, usize)> {
    let first = samples.first().ok_or_else(|| TrainError::Validation("empty corpus".into()))?;
    let dims = (first.image.width(), first.image.height());
    if let Some(s) = samples.iter().find(|s| (s.image.width(), s.image.height()) != dims) {
        return Err(TrainError::Validation(format!(
            "{} is {}x{}, expected {}x{}",
            s.id,
            s.image.width(),
            s.image.height(),
            dims.0,
            dims.1
        )));
    }
    Ok(dims)
}

impl Trainable for Autoencoder<f32> {
    const CHECKPOINT: &'static str = "autoencoder.aefg";

    fn params(&self) -> &ParamSet<f32> {
        Autoencoder::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamSet<f32> {
        Autoencoder::params_mut(self)
    }

    fn batch_loss(&self, g: &mut Graph<f32>, vars: &[Var], batch: &[&Sample]) -> Result<Var> {
        let images: Vec<_> = batch.iter().map(|s| &s.image).collect();
        let x = images_to_tensor::<f32>(&images, &Normalization::identity())?;
        let x = g.input(x);
        let y = self.forward_graph(g, vars, x)?;
        Ok(g.mse(y, x)?)
    }

    fn evaluate(&self, samples: &[&Sample], batch_size: usize) -> Result<(f64, Option<f64>)> {
        let mut total = 0.0;
        for batch in samples.chunks(batch_size) {
            let mut g = Graph::new();
            let vars = Autoencoder::params(self).bind(&mut g);
            let loss = self.batch_loss(&mut g, &vars, batch)?;
            total += g.value(loss).data()[0] as f64 * batch.len() as f64;
        }
        Ok((total / samples.len() as f64, None))
    }

    fn save(&self, path: &Path) -> Result<String> {
        Ok(Autoencoder::save(self, path)?)
    }

    fn checkpoint_hash(&self) -> Result<String> {
        Ok(Autoencoder::checkpoint_hash(self)?)
    }
}

/// Minimizes mean squared reconstruction error. Images must share one size,
/// divisible by the downsample factor. Returns the best-validation weights.
pub fn train_autoencoder(
    initial: Autoencoder,
    images: &[Sample],
    config: &TrainConfig,
) -> Result<(Autoencoder, TrainHistory)> {
    let (w, h) = same_size(images)?;
    if w % DOWNSAMPLE_FACTOR != 0 || h % DOWNSAMPLE_FACTOR != 0 {
        return Err(TrainError::Validation(format!(
            "training images are {w}x{h}; both sides must be divisible by {DOWNSAMPLE_FACTOR}"
        )));
    }
    fit(initial, images, config)
}

impl Trainable for Detector<f32> {
    const CHECKPOINT: &'static str = "detector.aefg";

    fn params(&self) -> &ParamSet<f32> {
        Detector::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamSet<f32> {
        Detector::params_mut(self)
    }

    fn batch_loss(&self, g: &mut Graph<f32>, vars: &[Var], batch: &[&Sample]) -> Result<Var> {
        let crops: Vec<_> = batch.iter().map(|s| &s.image).collect();
        let x = g.input(self.crops_to_tensor(&crops)?);
        let logits = self.logits_graph(g, vars, x)?;
        let labels: Vec<f32> = batch.iter().map(|s| s.label.target()).collect();
        Ok(g.bce_with_logits(logits, &labels)?)
    }

    fn evaluate(&self, samples: &[&Sample], batch_size: usize) -> Result<(f64, Option<f64>)> {
        let (mut total, mut correct) = (0.0, 0usize);
        for batch in samples.chunks(batch_size) {
            let mut g = Graph::new();
            let vars = Detector::params(self).bind(&mut g);
            let crops: Vec<_> = batch.iter().map(|s| &s.image).collect();
            let x = g.input(self.crops_to_tensor(&crops)?);
            let logits = self.logits_graph(&mut g, &vars, x)?;
            let labels: Vec<f32> = batch.iter().map(|s| s.label.target()).collect();
            correct += g
                .value(logits)
                .data()
                .iter()
                .zip(&labels)
                .filter(|(z, y)| (**z > 0.0) == (**y == 1.0))
                .count();
            let loss = g.bce_with_logits(logits, &labels)?;
            total += g.value(loss).data()[0] as f64 * batch.len() as f64;
        }
        let n = samples.len() as f64;
        Ok((total / n, Some(correct as f64 / n)))
    }

    fn save(&self, path: &Path) -> Result<String> {
        Ok(Detector::save(self, path)?)
    }

    fn checkpoint_hash(&self) -> Result<String> {
        Ok(Detector::checkpoint_hash(self)?)
    }
}

/// Binary cross-entropy on labeled crops (reconstructed = 1). Keeps the
/// weights with the best validation accuracy, ties broken by validation loss.
pub fn train_detector(initial: Detector, crops: &[Sample], config: &TrainConfig) -> Result<(Detector, TrainHistory)> {
    let (w, h) = same_size(crops)?;
    if w != initial.crop_size() || h != initial.crop_size() {
        return Err(TrainError::Validation(format!(
            "crops are {w}x{h}, detector expects {0}x{0}",
            initial.crop_size()
        )));
    }
    for label in [Label::Original, Label::Reconstructed] {
        if !crops.iter().any(|s| s.label == label) {
            return Err(TrainError::Validation(format!("no {label:?} crops: detector training needs both classes")));
        }
    }
    fit(initial, crops, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: Label,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Per-class precision/recall/F1 on a labeled split at the 0.5 crop rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvaluation {
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub rows: Vec<ClassRow>,
}

impl SplitEvaluation {
    pub fn from_predictions(pairs: impl IntoIterator<Item = (Label, bool)>) -> Self {
        let counts = ConfusionCounts::from_pairs(pairs.into_iter().map(|(l, p)| (l == Label::Reconstructed, p)));
        let row = |class, m: Metrics| ClassRow { class, precision: m.precision, recall: m.recall, f1: m.f1 };
        let total = counts.total();
        Self {
            counts,
            accuracy: (total > 0).then(|| (counts.tp + counts.tn) as f64 / total as f64),
            rows: vec![
                row(Label::Original, metrics(&counts.swapped())),
                row(Label::Reconstructed, metrics(&counts)),
            ],
        }
    }

    pub fn row(&self, class: Label) -> &ClassRow {
        self.rows.iter().find(|r| r.class == class).expect("both classes present")
    }
}

pub fn evaluate_split(detector: &Detector, samples: &[Sample], batch_size: usize) -> Result<SplitEvaluation> {
    let mut pairs = Vec::with_capacity(samples.len());
    for batch in samples.chunks(batch_size.max(1)) {
        let crops: Vec<_> = batch.iter().map(|s| &s.image).collect();
        let probs = detector.probabilities(&crops)?;
        pairs.extend(batch.iter().zip(probs).map(|(s, p)| (s.label, p > 0.5)));
    }
    Ok(SplitEvaluation::from_predictions(pairs))
}
