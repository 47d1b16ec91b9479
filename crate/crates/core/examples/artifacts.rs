//! Color statistics of the test card after JPEG and after autoencoders,
//! plus color-randomized visualizations.

use aeforge::datagen::generate_test_card;
use aeforge::eval::artifact_report;
use aeforge::models::{AeArch, Activation, Autoencoder};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let card = generate_test_card(2, 64, 64)?;
    let a = Autoencoder::new(AeArch::default(), 1)?;
    let b = Autoencoder::new(AeArch { widths: [16, 32, 64], latent_channels: 8, activation: Activation::Relu }, 2)?;
    let viz = std::env::temp_dir().join("aeforge-examples").join("artifacts");
    let rows = artifact_report(&card, &[("ae-a".into(), &a), ("ae-b".into(), &b)], &[100, 95, 75, 50], Some(&viz))?;
    println!("{:<8} {:>8} {:>9}", "row", "colors", "bw");
    for r in &rows {
        println!("{:<8} {:>8} {:>9.5}", r.name, r.default.unique_colors, r.default.bw_fraction);
    }
    println!("visualizations in {}", viz.display());
    Ok(())
}
