//! The surrogate convolutional autoencoder and the crop-level CNN detector.

mod autoencoder;
mod detector;

pub use autoencoder::{AeArch, Autoencoder, DOWNSAMPLE_FACTOR};
pub use detector::{Detector, DetectorArch, Normalization};

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ImageError, ImageRGB8};
use crate::seeds::sha256_hex;
use crate::tensor::{
    read_checkpoint, write_checkpoint, CheckpointError, Element, Graph, ParamSet, Parameter,
    Tensor, TensorError, Var,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Relu,
}

impl Activation {
    fn code(self) -> f32 {
        match self {
            Activation::Silu => 0.0,
            Activation::Relu => 1.0,
        }
    }

    fn from_code(code: f32) -> Result<Self> {
        match code as i32 {
            0 => Ok(Activation::Silu),
            1 => Ok(Activation::Relu),
            other => Err(ModelError::Mismatch(format!("unknown activation code {other}"))),
        }
    }

    pub(crate) fn apply<T: Element>(self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        Ok(match self {
            Activation::Silu => g.silu(x)?,
            Activation::Relu => g.relu(x)?,
        })
    }
}

/// Indices of a conv layer's weight and bias in its model's [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Conv {
    weight: usize,
    stride: usize,
    padding: usize,
}

impl Conv {
    /// He-uniform weights, zero bias.
    pub(crate) fn init<T: Element>(
        set: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = (cin * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let n = cout * cin * kernel * kernel;
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        let weight = set.push(Parameter::new(
            format!("{name}.weight"),
            Tensor::from_f64(vec![cout, cin, kernel, kernel], &w)?,
        ))?;
        set.push(Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![cout])))?;
        Ok(Self { weight, stride, padding: kernel / 2 })
    }

    pub(crate) fn forward<T: Element>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        Ok(g.conv2d(x, vars[self.weight], vars[self.weight + 1], self.stride, self.padding)?)
    }
}

/// Stacks images into an `[N, 3, H, W]` tensor, mapping each channel through
/// `(v / 255 - mean[c]) / std[c]`.
pub fn images_to_tensor<T: Element>(images: &[&ImageRGB8], norm: &Normalization) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| ModelError::Shape("empty image batch".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if (img.width(), img.height()) != (w, h) {
            return Err(ModelError::Shape(format!(
                "batch mixes {}x{} with {w}x{h}",
                img.width(),
                img.height()
            )));
        }
        for c in 0..3 {
            let (mean, std) = (norm.mean[c] as f64, norm.std[c] as f64);
            data.extend(
                img.pixels()
                    .iter()
                    .map(|p| T::from_f64_lossy((p[c] as f64 / 255.0 - mean) / std)),
            );
        }
    }
    Ok(Tensor::new(vec![images.len(), 3, h, w], data)?)
}

/// Inverse of [`images_to_tensor`] with identity normalization: clamp to
/// `[0, 1]`, scale by 255 and round half away from zero.
pub fn tensor_to_images<T: Element>(tensor: &Tensor<T>) -> Result<Vec<ImageRGB8>> {
    let &[n, 3, h, w] = tensor.shape() else {
        return Err(ModelError::Shape(format!("expected [N,3,H,W], got {:?}", tensor.shape())));
    };
    let plane = h * w;
    (0..n)
        .map(|i| {
            let base = &tensor.data()[i * 3 * plane..(i + 1) * 3 * plane];
            let px = |c: usize, j: usize| {
                let v = base[c * plane + j].to_f64_lossy().clamp(0.0, 1.0);
                (v * 255.0).round() as u8
            };
            Ok(ImageRGB8::new(w, h, (0..plane).map(|j| [px(0, j), px(1, j), px(2, j)]).collect())?)
        })
        .collect()
}

pub(crate) fn meta_tensor(values: &[f32]) -> Tensor<f32> {
    Tensor::new(vec![values.len()], values.to_vec()).expect("1-D shape matches")
}

/// Serialized checkpoint bytes for a parameter set plus metadata tensors.
pub(crate) fn encode_checkpoint(params: &ParamSet<f32>, meta: &[(&str, Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut entries: Vec<(&str, &Tensor<f32>)> = meta.iter().map(|(n, t)| (*n, t)).collect();
    entries.extend(params.iter().map(|p| (p.name.as_str(), &p.tensor)));
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &entries)?;
    Ok(buf)
}

pub(crate) struct LoadedEntries(Vec<(String, Tensor<f32>)>);

impl LoadedEntries {
    pub(crate) fn decode(bytes: &[u8]) -> Result<Self> {
        Ok(Self(read_checkpoint(bytes)?))
    }

    pub(crate) fn meta(&self, name: &str) -> Result<&[f32]> {
        self.0
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.data())
            .ok_or_else(|| ModelError::Mismatch(format!("missing metadata entry {name}")))
    }

    /// Copies stored weights into `params`, checking names and shapes.
    pub(crate) fn fill(&self, params: &mut ParamSet<f32>) -> Result<()> {
        let stored = self.0.iter().filter(|(n, _)| !n.starts_with("meta.")).count();
        if stored != params.len() {
            return Err(ModelError::Mismatch(format!(
                "checkpoint has {stored} parameters, model expects {}",
                params.len()
            )));
        }
        for p in params.as_mut_slice() {
            let (_, t) = self
                .0
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| ModelError::Mismatch(format!("missing parameter {}", p.name)))?;
            if t.shape() != p.tensor.shape() {
                return Err(ModelError::Mismatch(format!(
                    "{}: stored {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.tensor.shape()
                )));
            }
            p.tensor.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| ModelError::Checkpoint(CheckpointError::Io(e)))
}

pub(crate) fn checkpoint_hash(bytes: &[u8]) -> String {
    sha256_hex(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_image_round_trip() {
        let img = ImageRGB8::from_fn(4, 3, |x, y| [x as u8 * 60, y as u8 * 100, 255]).unwrap();
        let t: Tensor<f32> = images_to_tensor(&[&img, &img], &Normalization::identity()).unwrap();
        assert_eq!(t.shape(), &[2, 3, 3, 4]);
        let back = tensor_to_images(&t).unwrap();
        assert_eq!(back, vec![img.clone(), img]);
    }

    #[test]
    fn mixed_sizes_rejected() {
        let a = ImageRGB8::filled(4, 4, [0; 3]).unwrap();
        let b = ImageRGB8::filled(8, 4, [0; 3]).unwrap();
        assert!(images_to_tensor::<f32>(&[&a, &b], &Normalization::identity()).is_err());
    }
}
