//! The whole pipeline on the smoke profile, then a look at the report.
//! `cargo run --release --example pipeline -- desk` runs the desk profile.

use aeforge::pipeline::{run_all, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let profile = std::env::args().nth(1).unwrap_or_else(|| "smoke".into());
    let root = std::env::temp_dir().join("aeforge-examples").join(&profile);
    let config = RunConfig::profile(&profile, &root)?;
    let report = run_all(&config)?;
    println!("report: {}", config.report_path().display());
    if let Some(c) = &report.calibration {
        println!("threshold {} (FPR {}, recall {})", c.threshold, c.fpr, c.recall);
    }
    for row in &report.decisions {
        let pct = |r: Option<f64>| r.map_or("-".to_string(), |r| format!("{:.1}%", 100.0 * r));
        println!("{:<24} 1-try {:>7}  {}-try {:>7}", row.source, pct(row.one_try.rate), report.config.tries, pct(row.multi.rate));
    }
    for s in &report.separability {
        println!("{:<24} AUC {:.4}", s.source, s.auc);
    }
    Ok(())
}
