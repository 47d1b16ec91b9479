//! Image-level decisions: one crop at 0.5 versus the mean of ten crops.

use aeforge::datagen::{generate_scene, SceneSpec};
use aeforge::inference::{decide, DecisionConfig};
use aeforge::models::{Detector, DetectorArch, Normalization};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // With a trained checkpoint use `Detector::load(path)?` instead.
    let mut det = Detector::new(DetectorArch::default(), 32, Normalization::identity(), 1)?;
    for p in det.params_mut().as_mut_slice() {
        if p.name == "detector.head.weight" {
            p.tensor.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = if i % 2 == 0 { 0.5 } else { -0.4 });
        }
    }
    let image = generate_scene(&SceneSpec::random(3, 120, 90))?;
    let one = decide(&image, &det, &DecisionConfig::one_try(32, 17))?;
    let ten = decide(&image, &det, &DecisionConfig { tries: 10, threshold: 0.2, ..DecisionConfig::one_try(32, 17) })?;
    println!("1 try:  decision {} from {:.4}", one.decision, one.aggregate);
    println!("10 tries: decision {} from {:.4}", ten.decision, ten.aggregate);
    for c in &ten.crops {
        println!("  crop at ({:>3},{:>3}) p = {:.4}", c.x, c.y, c.prob);
    }
    println!("{}", serde_json::to_string(&one)?);
    Ok(())
}
