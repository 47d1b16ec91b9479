use std::collections::{BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ImageRGB8, Rgb};

pub fn unique_colors(image: &ImageRGB8) -> usize {
    image.pixels().iter().collect::<HashSet<_>>().len()
}

/// Share of pixels that are exactly `(0,0,0)` or `(255,255,255)`.
pub fn bw_fraction(image: &ImageRGB8) -> f64 {
    let bw = image
        .pixels()
        .iter()
        .filter(|&&p| p == [0, 0, 0] || p == [255, 255, 255])
        .count();
    bw as f64 / image.pixels().len() as f64
}

/// Replaces every distinct color with a distinct random color.
///
/// Colors are visited in sorted order so the mapping depends only on the set
/// of colors and `seed`.
pub fn color_randomize(image: &ImageRGB8, seed: u64) -> ImageRGB8 {
    let palette: BTreeSet<Rgb> = image.pixels().iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::with_capacity(palette.len());
    let mut map = HashMap::with_capacity(palette.len());
    for color in palette {
        // at most 2^24 colors exist, so a fresh one is always available
        let replacement = loop {
            let candidate: Rgb = rng.gen();
            if used.insert(candidate) {
                break candidate;
            }
        };
        map.insert(color, replacement);
    }
    let mut out = image.clone();
    for px in out.pixels_mut() {
        *px = map[px];
    }
    out
}
