//! Pick the threshold with the best recall whose false-positive rate stays
//! within a target.

use aeforge::inference::{calibrate_threshold, candidate_thresholds, rates_at};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let originals = [0.02, 0.05, 0.11, 0.13, 0.2, 0.31, 0.08, 0.04];
    let reconstructed = [0.9, 0.85, 0.32, 0.77, 0.6, 0.15, 0.95, 0.51];
    for t in candidate_thresholds(&originals, &reconstructed) {
        let (fpr, recall) = rates_at(&originals, &reconstructed, t);
        println!("t = {t:.3}: FPR {fpr:.3}, recall {recall:.3}");
    }
    let c = calibrate_threshold(&originals, &reconstructed, 0.0)?;
    println!("chosen t = {} (FPR {}, recall {})", c.threshold, c.fpr, c.recall);
    Ok(())
}
