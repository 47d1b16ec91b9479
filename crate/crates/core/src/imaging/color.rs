use super::{quantize_u8, ImageRGB8, Result};

/// Full-range (JFIF) BT.601 planes stored as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct YCbCrPlanes {
    pub width: usize,
    pub height: usize,
    pub y: Vec<f64>,
    pub cb: Vec<f64>,
    pub cr: Vec<f64>,
}

pub fn rgb_to_ycbcr(image: &ImageRGB8) -> YCbCrPlanes {
    let n = image.pixels().len();
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &[r, g, b] in image.pixels() {
        let (r, g, b) = (r as f64, g as f64, b as f64);
        y.push(0.299 * r + 0.587 * g + 0.114 * b);
        cb.push(128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b);
        cr.push(128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b);
    }
    YCbCrPlanes { width: image.width(), height: image.height(), y, cb, cr }
}

pub fn ycbcr_to_rgb(planes: &YCbCrPlanes) -> Result<ImageRGB8> {
    let pixels = planes
        .y
        .iter()
        .zip(&planes.cb)
        .zip(&planes.cr)
        .map(|((&y, &cb), &cr)| {
            let (cb, cr) = (cb - 128.0, cr - 128.0);
            [
                quantize_u8(y + 1.402 * cr),
                quantize_u8(y - 0.344136 * cb - 0.714136 * cr),
                quantize_u8(y + 1.772 * cb),
            ]
        })
        .collect();
    ImageRGB8::new(planes.width, planes.height, pixels)
}
