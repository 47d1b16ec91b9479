use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    checkpoint_hash, encode_checkpoint, images_to_tensor, meta_tensor, read_file, Activation, Conv,
    LoadedEntries, ModelError, Result,
};
use crate::imaging::ImageRGB8;
use crate::tensor::{Element, Graph, ParamSet, Parameter, Tensor, Var};

/// Per-channel standardization applied to `[0,1]`-scaled pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub fn identity() -> Self {
        Self { mean: [0.0; 3], std: [1.0; 3] }
    }

    /// Channel statistics of a set of images. A zero standard deviation is
    /// replaced by 1.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a ImageRGB8>) -> Self {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0usize;
        for img in images {
            for p in img.pixels() {
                for c in 0..3 {
                    let v = p[c] as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += img.pixels().len();
        }
        if n == 0 {
            return Self::identity();
        }
        let mean = sum.map(|s| s / n as f64);
        let std: [f64; 3] = std::array::from_fn(|c| {
            let var = (sq[c] / n as f64 - mean[c] * mean[c]).max(0.0);
            if var > 0.0 { var.sqrt() } else { 1.0 }
        });
        Self { mean: mean.map(|v| v as f32), std: std.map(|v| v as f32) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorArch {
    pub widths: [usize; 4],
}

impl Default for DetectorArch {
    fn default() -> Self {
        Self { widths: [16, 32, 64, 128] }
    }
}

/// Four stride-2 conv blocks, global average pooling and a one-logit head.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector<T = f32> {
    arch: DetectorArch,
    crop_size: usize,
    norm: Normalization,
    params: ParamSet<T>,
    blocks: [Conv; 4],
    head: usize,
}

impl<T: Element> Detector<T> {
    pub fn new(arch: DetectorArch, crop_size: usize, norm: Normalization, seed: u64) -> Result<Self> {
        if crop_size == 0 || arch.widths.contains(&0) {
            return Err(ModelError::Shape(format!("degenerate detector {arch:?} for crop {crop_size}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let [w0, w1, w2, w3] = arch.widths;
        let blocks = [
            Conv::init(&mut p, "detector.conv1", 3, w0, 3, 2, &mut rng)?,
            Conv::init(&mut p, "detector.conv2", w0, w1, 3, 2, &mut rng)?,
            Conv::init(&mut p, "detector.conv3", w1, w2, 3, 2, &mut rng)?,
            Conv::init(&mut p, "detector.conv4", w2, w3, 3, 2, &mut rng)?,
        ];
        // head starts at zero: every crop scores exactly 0.5 before training
        let head = p.push(Parameter::new("detector.head.weight", Tensor::zeros(vec![1, w3])))?;
        p.push(Parameter::new("detector.head.bias", Tensor::zeros(vec![1])))?;
        Ok(Self { arch, crop_size, norm, params: p, blocks, head })
    }

    pub fn arch(&self) -> &DetectorArch {
        &self.arch
    }

    pub fn crop_size(&self) -> usize {
        self.crop_size
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Element>(&self) -> Detector<U> {
        Detector {
            arch: self.arch,
            crop_size: self.crop_size,
            norm: self.norm,
            params: self.params.cast(),
            blocks: self.blocks,
            head: self.head,
        }
    }

    /// Logits `[N]` for a normalized `[N,3,s,s]` batch.
    pub fn logits_graph(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let shape = g.value(x).shape();
        let s = self.crop_size;
        if !matches!(shape, [_, 3, h, w] if *h == s && *w == s) {
            return Err(ModelError::Shape(format!("detector expects [N,3,{s},{s}], got {shape:?}")));
        }
        let n = shape[0];
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(g, vars, h)?;
            h = Activation::Silu.apply(g, h)?;
        }
        let pooled = g.global_avg_pool(h)?;
        let logit = g.linear(pooled, vars[self.head], vars[self.head + 1])?;
        Ok(g.reshape(logit, vec![n])?)
    }

    pub fn crops_to_tensor(&self, crops: &[&ImageRGB8]) -> Result<Tensor<T>> {
        images_to_tensor(crops, &self.norm)
    }

    pub fn logits(&self, batch: &Tensor<T>) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g);
        let x = g.input(batch.clone());
        let y = self.logits_graph(&mut g, &vars, x)?;
        Ok(g.value(y).data().to_vec())
    }

    /// Probability that each crop is an autoencoder reconstruction.
    pub fn probabilities(&self, crops: &[&ImageRGB8]) -> Result<Vec<f64>> {
        if crops.is_empty() {
            return Ok(Vec::new());
        }
        let logits = self.logits(&self.crops_to_tensor(crops)?)?;
        Ok(logits
            .into_iter()
            .map(|z| {
                let z = z.to_f64_lossy();
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            })
            .collect())
    }
}

impl Detector<f32> {
    fn meta(&self) -> Vec<(&'static str, Tensor<f32>)> {
        vec![
            ("meta.kind", meta_tensor(&[1.0])),
            ("meta.widths", meta_tensor(&self.arch.widths.map(|v| v as f32))),
            ("meta.crop_size", meta_tensor(&[self.crop_size as f32])),
            ("meta.norm_mean", meta_tensor(&self.norm.mean)),
            ("meta.norm_std", meta_tensor(&self.norm.std)),
        ]
    }

    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        encode_checkpoint(&self.params, &self.meta())
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let entries = LoadedEntries::decode(bytes)?;
        if entries.meta("meta.kind")? != [1.0] {
            return Err(ModelError::Mismatch("checkpoint is not a detector".into()));
        }
        let w = entries.meta("meta.widths")?;
        let crop = entries.meta("meta.crop_size")?;
        let mean = entries.meta("meta.norm_mean")?;
        let std = entries.meta("meta.norm_std")?;
        if w.len() != 4 || crop.len() != 1 || mean.len() != 3 || std.len() != 3 {
            return Err(ModelError::Mismatch("malformed detector metadata".into()));
        }
        let arch = DetectorArch { widths: std::array::from_fn(|i| w[i] as usize) };
        let norm = Normalization {
            mean: [mean[0], mean[1], mean[2]],
            std: [std[0], std[1], std[2]],
        };
        let mut model = Self::new(arch, crop[0] as usize, norm, 0)?;
        entries.fill(&mut model.params)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let bytes = self.to_checkpoint_bytes()?;
        std::fs::write(path, &bytes).map_err(|e| ModelError::Checkpoint(e.into()))?;
        Ok(checkpoint_hash(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_bytes(&read_file(path.as_ref())?)
    }

    pub fn checkpoint_hash(&self) -> Result<String> {
        Ok(checkpoint_hash(&self.to_checkpoint_bytes()?))
    }
}
