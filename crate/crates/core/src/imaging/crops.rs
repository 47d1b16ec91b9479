use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ImageError, ImageRGB8, Result};

/// `count` square crops of side `size`, corners drawn from `rng_seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CropSpec {
    pub size: usize,
    pub count: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crop {
    pub x: usize,
    pub y: usize,
    pub image: ImageRGB8,
}

impl CropSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.count == 0 {
            return Err(ImageError::Validation(format!(
                "crop size ({}) and count ({}) must be at least 1",
                self.size, self.count
            )));
        }
        Ok(())
    }

    /// Top-left corners, uniform over all valid positions; crops may overlap.
    pub fn corners(&self, width: usize, height: usize) -> Result<Vec<(usize, usize)>> {
        self.validate()?;
        if width < self.size || height < self.size {
            return Err(ImageError::TooSmall { width, height, size: self.size });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        Ok((0..self.count)
            .map(|_| {
                let x = rng.gen_range(0..=width - self.size);
                let y = rng.gen_range(0..=height - self.size);
                (x, y)
            })
            .collect())
    }
}

pub fn random_crops(image: &ImageRGB8, spec: &CropSpec) -> Result<Vec<Crop>> {
    spec.corners(image.width(), image.height())?
        .into_iter()
        .map(|(x, y)| {
            Ok(Crop {
                x,
                y,
                image: image.crop(x, y, spec.size, spec.size)?,
            })
        })
        .collect()
}
