use super::{quantize_u8, ImageError, ImageRGB8, Result};

/// Output dimensions for a uniform scale: `max(1, round(dim * scale))`.
pub fn scaled_dims(width: usize, height: usize, scale: f64) -> (usize, usize) {
    let f = |d: usize| ((d as f64 * scale).round() as usize).max(1);
    (f(width), f(height))
}

/// Bilinear resize by `scale` using half-pixel centers:
/// `src = (dst + 0.5) / scale - 0.5`, clamped to the image.
pub fn resize_bilinear(image: &ImageRGB8, scale: f64) -> Result<ImageRGB8> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(ImageError::Validation(format!("resize scale must be positive, got {scale}")));
    }
    if scale == 1.0 {
        return Ok(image.clone());
    }
    let (w, h) = scaled_dims(image.width(), image.height(), scale);
    resample(image, w, h, 1.0 / scale, 1.0 / scale)
}

/// Bilinear resize to explicit dimensions (per-axis ratio `in / out`).
pub fn resize_to(image: &ImageRGB8, width: usize, height: usize) -> Result<ImageRGB8> {
    if width == 0 || height == 0 {
        return Err(ImageError::Validation(format!("target size {width}x{height} must be positive")));
    }
    if (width, height) == (image.width(), image.height()) {
        return Ok(image.clone());
    }
    resample(
        image,
        width,
        height,
        image.width() as f64 / width as f64,
        image.height() as f64 / height as f64,
    )
}

fn taps(dst: usize, inv_scale: f64, len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * inv_scale - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, src - i0 as f64)
}

fn resample(image: &ImageRGB8, width: usize, height: usize, inv_x: f64, inv_y: f64) -> Result<ImageRGB8> {
    let xs: Vec<_> = (0..width).map(|x| taps(x, inv_x, image.width())).collect();
    let ys: Vec<_> = (0..height).map(|y| taps(y, inv_y, image.height())).collect();
    ImageRGB8::from_fn(width, height, |x, y| {
        let (x0, x1, fx) = xs[x];
        let (y0, y1, fy) = ys[y];
        let (p00, p10, p01, p11) = (image.get(x0, y0), image.get(x1, y0), image.get(x0, y1), image.get(x1, y1));
        std::array::from_fn(|c| {
            let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
            let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
            quantize_u8(top * (1.0 - fy) + bottom * fy)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_scale() {
        let img = ImageRGB8::from_fn(5, 3, |x, y| [x as u8 * 40, y as u8 * 80, 3]).unwrap();
        assert_eq!(resize_bilinear(&img, 1.0).unwrap(), img);
    }

    #[test]
    fn two_by_two_half_scale_blends_center() {
        let img = ImageRGB8::from_fn(2, 2, |x, _| if x == 0 { [0; 3] } else { [255; 3] }).unwrap();
        let out = resize_bilinear(&img, 0.5).unwrap();
        assert_eq!((out.width(), out.height()), (1, 1));
        assert_eq!(out.get(0, 0), [128; 3]);
    }

    #[test]
    fn dims_follow_rounding_rule() {
        assert_eq!(scaled_dims(64, 48, 0.75), (48, 36));
        assert_eq!(scaled_dims(3, 1, 0.5), (2, 1));
        assert_eq!(scaled_dims(1, 1, 0.1), (1, 1));
        let img = ImageRGB8::filled(37, 23, [9; 3]).unwrap();
        let out = resize_bilinear(&img, 0.5).unwrap();
        assert_eq!((out.width(), out.height()), (19, 12));
    }

    #[test]
    fn rejects_non_positive_scale() {
        let img = ImageRGB8::filled(2, 2, [0; 3]).unwrap();
        assert!(resize_bilinear(&img, 0.0).is_err());
        assert!(resize_bilinear(&img, -1.0).is_err());
    }

    #[test]
    fn upscale_to_target() {
        let img = ImageRGB8::filled(10, 12, [50; 3]).unwrap();
        let out = resize_to(&img, 32, 32).unwrap();
        assert_eq!((out.width(), out.height()), (32, 32));
        assert!(out.pixels().iter().all(|&p| p == [50; 3]));
    }
}
