//! Procedural scenes drawn from resolution buckets.

use aeforge::datagen::{generate_scene, sample_resolution, ResolutionBucket, SceneSpec};
use aeforge::imaging::{save_ppm, unique_colors};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let buckets = ResolutionBucket::desk_defaults();
    let weights = vec![1.0; buckets.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dir = std::env::temp_dir().join("aeforge-examples").join("scenes");
    std::fs::create_dir_all(&dir)?;
    for i in 0..6u64 {
        let r = sample_resolution(&buckets, &weights, &mut rng)?;
        let scene = generate_scene(&SceneSpec::random(i, r.width, r.height))?;
        let path = dir.join(format!("{i}.ppm"));
        save_ppm(&scene, &path)?;
        println!("{}: bucket {} {}x{}, {} colors", path.display(), r.bucket, r.width, r.height, unique_colors(&scene));
    }
    Ok(())
}
