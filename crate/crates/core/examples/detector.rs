//! Train the crop detector on originals against autoencoder reconstructions.

use aeforge::datagen::{build_corpus, load_split, CorpusConfig, Label, ResolutionBucket, Split};
use aeforge::models::{AeArch, Activation, Autoencoder, Detector, DetectorArch, Normalization};
use aeforge::training::{evaluate_split, train_detector, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join("aeforge-examples").join("detector");
    let _ = std::fs::remove_dir_all(&root);
    let ae = Autoencoder::new(AeArch { widths: [8, 16, 32], latent_channels: 4, activation: Activation::Silu }, 2)?;
    let config = CorpusConfig {
        originals: 200,
        buckets: vec![ResolutionBucket::new(32, 64)],
        weights: vec![1.0],
        crop_size: 32,
        seed: 9,
        train_fraction: 0.75,
        context: 24,
    };
    let manifest = build_corpus(&config, &ae, "ae-demo", &root)?;
    let train = load_split(&manifest, &root, Split::Train)?;
    let test = load_split(&manifest, &root, Split::Test)?;
    let norm = Normalization::from_images(train.iter().map(|s| &s.image));
    let det = Detector::new(DetectorArch { widths: [8, 16, 16, 32] }, 32, norm, 4)?;
    let cfg = TrainConfig { epochs: 4, batch_size: 16, warmup_steps: 10, ..TrainConfig::default() };
    let (det, history) = train_detector(det, &train, &cfg)?;
    println!("best epoch {}", history.best_epoch);
    let eval = evaluate_split(&det, &test, 64)?;
    println!("held-out accuracy {:?}", eval.accuracy);
    for label in [Label::Original, Label::Reconstructed] {
        let r = eval.row(label);
        println!("{label:?}: precision {:?} recall {:?} f1 {:?}", r.precision, r.recall, r.f1);
    }
    Ok(())
}
