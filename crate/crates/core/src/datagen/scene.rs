use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Result};
use crate::imaging::{ImageRGB8, Rgb};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Texture {
    Flat,
    Gradient,
    NoiseSpeckle,
    Stripes,
}

impl Texture {
    pub const ALL: [Texture; 4] = [Texture::Flat, Texture::Gradient, Texture::NoiseSpeckle, Texture::Stripes];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub palette_size: usize,
    pub shape_count: usize,
    pub texture: Texture,
    /// Fixed palette; when absent `palette_size` random colors are drawn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<Vec<Rgb>>,
}

impl SceneSpec {
    /// Random scene parameters for a `width x height` canvas.
    pub fn random(seed: u64, width: usize, height: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7_E5EE_D000_0001);
        Self {
            seed,
            width,
            height,
            palette_size: rng.gen_range(3..=8),
            shape_count: rng.gen_range(3..=12),
            texture: *Texture::ALL.choose(&mut rng).expect("non-empty"),
            palette: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Circle { cx: f64, cy: f64, r: f64 },
    Triangle { p: [(f64, f64); 3] },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Self {
        let (wf, hf) = (w as f64, h as f64);
        let side = wf.min(hf);
        let size = rng.gen_range(0.1..0.5) * side;
        let cx = rng.gen_range(0.0..wf);
        let cy = rng.gen_range(0.0..hf);
        match rng.gen_range(0..3) {
            0 => {
                let aspect = rng.gen_range(0.5..2.0);
                let (hw, hh) = (size * aspect / 2.0, size / aspect / 2.0);
                Shape::Rect { x0: cx - hw, y0: cy - hh, x1: cx + hw, y1: cy + hh }
            }
            1 => Shape::Circle { cx, cy, r: size / 2.0 },
            _ => {
                let mut p = [(0.0, 0.0); 3];
                for v in &mut p {
                    let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let d = rng.gen_range(0.4..1.0) * size;
                    *v = (cx + d * a.cos(), cy + d * a.sin());
                }
                Shape::Triangle { p }
            }
        }
    }

    /// Hard-edged coverage test at the pixel center.
    fn contains(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => px >= x0 && px < x1 && py >= y0 && py < y1,
            Shape::Circle { cx, cy, r } => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
            Shape::Triangle { p } => {
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0);
                let (e0, e1, e2) = (edge(p[0], p[1]), edge(p[1], p[2]), edge(p[2], p[0]));
                (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0)
            }
        }
    }
}

fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
    std::array::from_fn(|c| (a[c] as f64 + (b[c] as f64 - a[c] as f64) * t).round() as u8)
}

fn paint_background(spec: &SceneSpec, palette: &[Rgb], rng: &mut ChaCha8Rng) -> Result<ImageRGB8> {
    let (w, h) = (spec.width, spec.height);
    let (c0, c1) = (palette[0], palette[1]);
    let image = match spec.texture {
        Texture::Flat => ImageRGB8::filled(w, h, c0),
        Texture::Gradient => {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            let proj = |x: f64, y: f64| x * dx + y * dy;
            let corners = [proj(0.0, 0.0), proj(w as f64, 0.0), proj(0.0, h as f64), proj(w as f64, h as f64)];
            let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            ImageRGB8::from_fn(w, h, |x, y| {
                let t = (proj(x as f64 + 0.5, y as f64 + 0.5) - lo) / (hi - lo);
                lerp(c0, c1, t)
            })
        }
        Texture::NoiseSpeckle => {
            let density = rng.gen_range(0.05..0.3);
            ImageRGB8::from_fn(w, h, |_, _| {
                if rng.gen_bool(density) {
                    palette[rng.gen_range(0..palette.len())]
                } else {
                    c0
                }
            })
        }
        Texture::Stripes => {
            let period = rng.gen_range(2..=8usize);
            let orientation = rng.gen_range(0..3);
            ImageRGB8::from_fn(w, h, |x, y| {
                let coord = match orientation {
                    0 => x,
                    1 => y,
                    _ => x + y,
                };
                if (coord / period) % 2 == 0 { c0 } else { c1 }
            })
        }
    };
    Ok(image?)
}

/// Filled rectangles, circles and triangles over a textured background.
/// Edges are not anti-aliased.
pub fn generate_scene(spec: &SceneSpec) -> Result<ImageRGB8> {
    if spec.shape_count == 0 {
        return Err(DataError::Validation("shape_count must be at least 1".into()));
    }
    if spec.width == 0 || spec.height == 0 {
        return Err(DataError::Validation(format!("scene size {}x{} must be positive", spec.width, spec.height)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let palette: Vec<Rgb> = match &spec.palette {
        Some(p) if p.len() >= 2 => p.clone(),
        Some(p) => {
            return Err(DataError::Validation(format!("palette needs at least 2 colors, got {}", p.len())));
        }
        None if spec.palette_size >= 2 => (0..spec.palette_size).map(|_| rng.gen()).collect(),
        None => {
            return Err(DataError::Validation(format!("palette_size must be at least 2, got {}", spec.palette_size)));
        }
    };
    let mut image = paint_background(spec, &palette, &mut rng)?;
    for _ in 0..spec.shape_count {
        let shape = Shape::random(&mut rng, spec.width, spec.height);
        let color = palette[rng.gen_range(0..palette.len())];
        for y in 0..spec.height {
            for x in 0..spec.width {
                if shape.contains(x, y) {
                    image.set(x, y, color);
                }
            }
        }
    }
    Ok(image)
}

/// Strictly black-and-white geometric test card: a white field with black
/// rectangles, discs, triangles, rings, a checker patch and thin lines.
pub fn generate_test_card(seed: u64, width: usize, height: usize) -> Result<ImageRGB8> {
    const BLACK: Rgb = [0, 0, 0];
    const WHITE: Rgb = [255, 255, 255];
    if width == 0 || height == 0 {
        return Err(DataError::Validation(format!("card size {width}x{height} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut card = ImageRGB8::filled(width, height, WHITE)?;
    let fill = |card: &mut ImageRGB8, shape: &Shape, color: Rgb| {
        for y in 0..height {
            for x in 0..width {
                if shape.contains(x, y) {
                    card.set(x, y, color);
                }
            }
        }
    };
    for i in 0..8 {
        let shape = Shape::random(&mut rng, width, height);
        fill(&mut card, &shape, if i % 4 == 3 { WHITE } else { BLACK });
    }
    // ring
    let (cx, cy) = (rng.gen_range(0.25..0.75) * width as f64, rng.gen_range(0.25..0.75) * height as f64);
    let r = 0.2 * width.min(height) as f64;
    fill(&mut card, &Shape::Circle { cx, cy, r }, BLACK);
    fill(&mut card, &Shape::Circle { cx, cy, r: r * 0.6 }, WHITE);
    // checker patch
    let cell = (width.min(height) / 32).max(2);
    let (px, py) = (rng.gen_range(0..width.max(2) / 2), rng.gen_range(0..height.max(2) / 2));
    for y in py..(py + 8 * cell).min(height) {
        for x in px..(px + 8 * cell).min(width) {
            let on = ((x - px) / cell + (y - py) / cell) % 2 == 0;
            card.set(x, y, if on { BLACK } else { WHITE });
        }
    }
    // one-pixel and two-pixel lines
    for k in 0..3 {
        let y = rng.gen_range(0..height);
        for x in 0..width {
            card.set(x, y, BLACK);
            if k == 2 && y + 1 < height {
                card.set(x, y + 1, BLACK);
            }
        }
        let x = rng.gen_range(0..width);
        for y in 0..height {
            card.set(x, y, if k == 1 { WHITE } else { BLACK });
        }
    }
    Ok(card)
}
