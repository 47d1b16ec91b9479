//! Paired original/reconstructed crops written to disk with a manifest.

use aeforge::datagen::{build_corpus, CorpusConfig, ResolutionBucket, Split};
use aeforge::models::{AeArch, Autoencoder};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join("aeforge-examples").join("corpus");
    let _ = std::fs::remove_dir_all(&root);
    // an untrained autoencoder still leaves its fingerprint on every crop
    let ae = Autoencoder::new(AeArch::default(), 3)?;
    let config = CorpusConfig {
        originals: 40,
        buckets: vec![ResolutionBucket::new(64, 96), ResolutionBucket::new(96, 128)],
        weights: vec![1.0, 1.0],
        crop_size: 32,
        seed: 5,
        train_fraction: 0.75,
        context: 24,
    };
    let manifest = build_corpus(&config, &ae, "ae-demo", &root)?;
    manifest.save(root.join("manifest.jsonl"))?;
    println!(
        "{} train and {} test crops under {}",
        manifest.split(Split::Train).count(),
        manifest.split(Split::Test).count(),
        root.display()
    );
    for e in manifest.entries.iter().take(4) {
        println!("{} {:?} {:?}", e.path, e.label, e.origin);
    }
    Ok(())
}
