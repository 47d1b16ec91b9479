use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    checkpoint_hash, encode_checkpoint, images_to_tensor, meta_tensor, read_file, tensor_to_images,
    Activation, Conv, LoadedEntries, ModelError, Normalization, Result,
};
use crate::imaging::ImageRGB8;
use crate::tensor::{Element, Graph, ParamSet, Tensor, Var};

/// Spatial reduction between image and latent (three stride-2 stages).
pub const DOWNSAMPLE_FACTOR: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AeArch {
    /// Encoder stage widths; the decoder mirrors them.
    pub widths: [usize; 3],
    pub latent_channels: usize,
    pub activation: Activation,
}

impl Default for AeArch {
    fn default() -> Self {
        Self {
            widths: [32, 64, 128],
            latent_channels: 4,
            activation: Activation::Silu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layers {
    enc: [Conv; 3],
    to_latent: Conv,
    from_latent: Conv,
    dec: [Conv; 3],
    out: Conv,
}

/// Deterministic convolutional autoencoder: `[N,3,H,W]` in `[0,1]` to a
/// `[N,c,H/8,W/8]` latent and back.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder<T = f32> {
    arch: AeArch,
    params: ParamSet<T>,
    layers: Layers,
}

impl<T: Element> Autoencoder<T> {
    pub fn new(arch: AeArch, seed: u64) -> Result<Self> {
        if arch.latent_channels == 0 || arch.widths.contains(&0) {
            return Err(ModelError::Shape(format!("degenerate architecture {arch:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let [w0, w1, w2] = arch.widths;
        let enc = [
            Conv::init(&mut p, "encoder.conv1", 3, w0, 3, 2, &mut rng)?,
            Conv::init(&mut p, "encoder.conv2", w0, w1, 3, 2, &mut rng)?,
            Conv::init(&mut p, "encoder.conv3", w1, w2, 3, 2, &mut rng)?,
        ];
        let to_latent = Conv::init(&mut p, "encoder.latent", w2, arch.latent_channels, 1, 1, &mut rng)?;
        let from_latent = Conv::init(&mut p, "decoder.latent", arch.latent_channels, w2, 1, 1, &mut rng)?;
        let dec = [
            Conv::init(&mut p, "decoder.up1", w2, w1, 3, 1, &mut rng)?,
            Conv::init(&mut p, "decoder.up2", w1, w0, 3, 1, &mut rng)?,
            Conv::init(&mut p, "decoder.up3", w0, w0, 3, 1, &mut rng)?,
        ];
        let out = Conv::init(&mut p, "decoder.out", w0, 3, 3, 1, &mut rng)?;
        Ok(Self {
            arch,
            params: p,
            layers: Layers { enc, to_latent, from_latent, dec, out },
        })
    }

    pub fn arch(&self) -> &AeArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Element>(&self) -> Autoencoder<U> {
        Autoencoder {
            arch: self.arch,
            params: self.params.cast(),
            layers: self.layers.clone(),
        }
    }

    fn check_input(shape: &[usize]) -> Result<()> {
        match shape {
            [_, 3, h, w] if h % DOWNSAMPLE_FACTOR == 0 && w % DOWNSAMPLE_FACTOR == 0 && *h > 0 && *w > 0 => Ok(()),
            _ => Err(ModelError::Shape(format!(
                "autoencoder input must be [N,3,H,W] with H and W divisible by {DOWNSAMPLE_FACTOR}, got {shape:?}"
            ))),
        }
    }

    pub fn encode_graph(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        Self::check_input(g.value(x).shape())?;
        let act = self.arch.activation;
        let mut h = x;
        for conv in &self.layers.enc {
            h = conv.forward(g, vars, h)?;
            h = act.apply(g, h)?;
        }
        self.layers.to_latent.forward(g, vars, h)
    }

    pub fn decode_graph(&self, g: &mut Graph<T>, vars: &[Var], z: Var) -> Result<Var> {
        let shape = g.value(z).shape();
        if shape.len() != 4 || shape[1] != self.arch.latent_channels {
            return Err(ModelError::Shape(format!(
                "latent must be [N,{},h,w], got {shape:?}",
                self.arch.latent_channels
            )));
        }
        let act = self.arch.activation;
        let mut h = self.layers.from_latent.forward(g, vars, z)?;
        h = act.apply(g, h)?;
        for conv in &self.layers.dec {
            h = g.upsample_nearest2x(h)?;
            h = conv.forward(g, vars, h)?;
            h = act.apply(g, h)?;
        }
        self.layers.out.forward(g, vars, h)
    }

    /// Encode then decode, recording everything on `g`.
    pub fn forward_graph(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let z = self.encode_graph(g, vars, x)?;
        self.decode_graph(g, vars, z)
    }

    pub fn encode(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g);
        let x = g.input(images.clone());
        let z = self.encode_graph(&mut g, &vars, x)?;
        Ok(g.value(z).clone().with_requires_grad(false))
    }

    pub fn decode(&self, latent: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g);
        let z = g.input(latent.clone());
        let y = self.decode_graph(&mut g, &vars, z)?;
        Ok(g.value(y).clone().with_requires_grad(false))
    }

    /// Round trip of equally-sized images through the autoencoder, quantized
    /// back to 8 bits. Output dimensions always equal input dimensions.
    pub fn reconstruct_batch(&self, images: &[&ImageRGB8]) -> Result<Vec<ImageRGB8>> {
        let x = images_to_tensor::<T>(images, &Normalization::identity())?;
        let y = self.decode(&self.encode(&x)?)?;
        tensor_to_images(&y)
    }

    pub fn reconstruct(&self, image: &ImageRGB8) -> Result<ImageRGB8> {
        Ok(self.reconstruct_batch(&[image])?.remove(0))
    }
}

impl Autoencoder<f32> {
    fn meta(&self) -> Vec<(&'static str, Tensor<f32>)> {
        let w = self.arch.widths.map(|v| v as f32);
        vec![
            ("meta.kind", meta_tensor(&[0.0])),
            ("meta.widths", meta_tensor(&w)),
            ("meta.latent_channels", meta_tensor(&[self.arch.latent_channels as f32])),
            ("meta.activation", meta_tensor(&[self.arch.activation.code()])),
        ]
    }

    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        encode_checkpoint(&self.params, &self.meta())
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let entries = LoadedEntries::decode(bytes)?;
        if entries.meta("meta.kind")? != [0.0] {
            return Err(ModelError::Mismatch("checkpoint is not an autoencoder".into()));
        }
        let w = entries.meta("meta.widths")?;
        let latent = entries.meta("meta.latent_channels")?;
        let act = entries.meta("meta.activation")?;
        if w.len() != 3 || latent.len() != 1 || act.len() != 1 {
            return Err(ModelError::Mismatch("malformed autoencoder metadata".into()));
        }
        let arch = AeArch {
            widths: [w[0] as usize, w[1] as usize, w[2] as usize],
            latent_channels: latent[0] as usize,
            activation: Activation::from_code(act[0])?,
        };
        let mut model = Self::new(arch, 0)?;
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

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn checkpoint_hash(&self) -> Result<String> {
        Ok(checkpoint_hash(&self.to_checkpoint_bytes()?))
    }
}
