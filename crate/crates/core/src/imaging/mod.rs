//! 8-bit RGB images, PPM I/O, the JPEG-style degrader, resizing, crop
//! sampling and color statistics.

mod color;
mod crops;
mod jpeg;
mod ppm;
mod resize;
mod stats;

pub use color::{rgb_to_ycbcr, ycbcr_to_rgb, YCbCrPlanes};
pub use crops::{random_crops, Crop, CropSpec};
pub use jpeg::{
    jpeg_degrade, QuantTables, BASE_CHROMA_TABLE, BASE_LUMA_TABLE,
};
pub use ppm::{decode_ppm, encode_ppm, load_ppm, save_ppm};
pub use resize::{resize_bilinear, resize_to, scaled_dims};
pub use stats::{bw_fraction, color_randomize, unique_colors};

use thiserror::Error;

pub type Rgb = [u8; 3];

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid image: {0}")]
    Validation(String),
    #[error("PPM parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("image {width}x{height} is smaller than the {size}x{size} crop")]
    TooSmall { width: usize, height: usize, size: usize },
    #[error("image I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ImageError> = std::result::Result<T, E>;

/// Row-major grid of RGB pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageRGB8 {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl ImageRGB8 {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImageError::Validation(format!("dimensions {width}x{height} must be positive")));
        }
        if pixels.len() != width * height {
            return Err(ImageError::Validation(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Result<Self> {
        Self::new(width, height, vec![color; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, color: Rgb) {
        self.pixels[y * self.width + x] = color;
    }

    /// Copies the `size x size` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        if x + width > self.width || y + height > self.height {
            return Err(ImageError::Validation(format!(
                "crop {width}x{height}@({x},{y}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        Self::from_fn(width, height, |cx, cy| self.get(x + cx, y + cy))
    }
}

/// Round half away from zero, clamped into `0..=255`.
pub(crate) fn quantize_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}
