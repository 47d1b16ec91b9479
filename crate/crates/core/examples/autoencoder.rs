//! Train a small autoencoder on scenes and measure its reconstructions.

use aeforge::datagen::{generate_scene, Label, Sample, SceneSpec};
use aeforge::models::{AeArch, Activation, Autoencoder};
use aeforge::training::{train_autoencoder, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let samples: Vec<Sample> = (0..96u64)
        .map(|i| {
            Ok(Sample {
                id: format!("scene-{i}"),
                source: "scene".into(),
                label: Label::Original,
                image: generate_scene(&SceneSpec::random(i, 32, 32))?,
            })
        })
        .collect::<Result<_, Box<dyn std::error::Error>>>()?;
    let arch = AeArch { widths: [8, 16, 32], latent_channels: 4, activation: Activation::Silu };
    let config = TrainConfig { epochs: 3, batch_size: 16, warmup_steps: 5, ..TrainConfig::default() };
    let (ae, history) = train_autoencoder(Autoencoder::new(arch, 1)?, &samples, &config)?;
    for e in &history.epochs {
        println!("epoch {}: train {:.5} val {:.5}", e.epoch, e.train_loss, e.val_loss);
    }
    let img = &samples[0].image;
    let recon = ae.reconstruct(img)?;
    let mae: f64 = img
        .pixels()
        .iter()
        .zip(recon.pixels())
        .flat_map(|(a, b)| (0..3).map(move |c| (a[c] as f64 - b[c] as f64).abs()))
        .sum::<f64>()
        / (3 * img.pixels().len()) as f64;
    println!("mean absolute pixel error {mae:.2}, checkpoint {}", &ae.checkpoint_hash()?[..12]);
    Ok(())
}
