//! Detection rates under the standard JPEG and resize grid, run on the smoke
//! profile's test images.

use aeforge::datagen::{CorpusManifest, Split};
use aeforge::eval::{robustness_sweep, Transform};
use aeforge::inference::BatchConfig;
use aeforge::models::Detector;
use aeforge::pipeline::{run_all, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = RunConfig::smoke(std::env::temp_dir().join("aeforge-examples").join("robustness"));
    run_all(&config)?;
    let det = Detector::load(config.detector_checkpoint())?;
    let manifest = CorpusManifest::load(config.image_manifest_path())?;
    let entries: Vec<_> = manifest.split(Split::Test).collect();
    let root = config.image_manifest_path().parent().unwrap().to_path_buf();
    let batch = BatchConfig::new(config.crop_size, 10, 0.5, 1);
    let grid = robustness_sweep(&entries, &root, &det, &batch, &Transform::standard_grid())?;
    for row in &grid.rows {
        let cells: Vec<String> = row
            .cells
            .iter()
            .map(|c| format!("{}={}", c.transform, c.rate.map_or("-".into(), |r| format!("{r:.2}"))))
            .collect();
        println!("{:<24} {}", row.source, cells.join(" "));
    }
    Ok(())
}
