//! The lossy core of baseline JPEG: 8x8 DCT-II, quality-scaled quantization
//! and reconstruction. No entropy coding and no chroma subsampling (4:4:4).

use std::fmt;

use super::color::{rgb_to_ycbcr, ycbcr_to_rgb};
use super::{ImageError, ImageRGB8, Result};

/// Annex K luminance table, row-major (natural order, not zig-zag).
pub const BASE_LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex K chrominance table, row-major.
pub const BASE_CHROMA_TABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTables {
    pub luma: [u16; 64],
    pub chroma: [u16; 64],
    pub quality: u8,
}

impl QuantTables {
    /// libjpeg-style scaling: `scale = q < 50 ? 5000 / q : 200 - 2q`, then
    /// `clamp((entry * scale + 50) / 100, 1, 255)` with integer division.
    pub fn for_quality(quality: u8) -> Result<Self> {
        if !(1..=100).contains(&quality) {
            return Err(ImageError::Validation(format!("JPEG quality {quality} outside 1..=100")));
        }
        let q = quality as u32;
        let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
        let scaled = |base: &[u16; 64]| base.map(|e| ((e as u32 * scale + 50) / 100).clamp(1, 255) as u16);
        Ok(Self {
            luma: scaled(&BASE_LUMA_TABLE),
            chroma: scaled(&BASE_CHROMA_TABLE),
            quality,
        })
    }
}

impl fmt::Display for QuantTables {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (title, table) in [("luma", &self.luma), ("chroma", &self.chroma)] {
            writeln!(f, "# {title} q={}", self.quality)?;
            for row in table.chunks(8) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:>3}")).collect();
                writeln!(f, "{}", cells.join(" "))?;
            }
        }
        Ok(())
    }
}

/// Orthonormal DCT-II basis: `m[u][x] = a(u) cos((2x + 1) u pi / 16)`.
fn dct_matrix() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    m
}

fn transform(block: &[f64; 64], m: &[[f64; 8]; 8], inverse: bool) -> [f64; 64] {
    // forward: M X M^T; inverse: M^T F M
    let at = |i: usize, j: usize| if inverse { m[j][i] } else { m[i][j] };
    let mut tmp = [0.0; 64];
    for i in 0..8 {
        for j in 0..8 {
            tmp[i * 8 + j] = (0..8).map(|k| at(i, k) * block[k * 8 + j]).sum();
        }
    }
    let mut out = [0.0; 64];
    for i in 0..8 {
        for j in 0..8 {
            out[i * 8 + j] = (0..8).map(|k| tmp[i * 8 + k] * at(j, k)).sum();
        }
    }
    out
}

fn degrade_plane(plane: &[f64], width: usize, height: usize, table: &[u16; 64], m: &[[f64; 8]; 8]) -> Vec<f64> {
    let pw = width.div_ceil(8) * 8;
    let ph = height.div_ceil(8) * 8;
    let sample = |x: usize, y: usize| plane[y.min(height - 1) * width + x.min(width - 1)];
    let mut out = vec![0.0; width * height];
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = sample(bx + x, by + y) - 128.0;
                }
            }
            let mut coeffs = transform(&block, m, false);
            for (c, &q) in coeffs.iter_mut().zip(table) {
                let q = q as f64;
                *c = (*c / q).round() * q;
            }
            let pixels = transform(&coeffs, m, true);
            for y in 0..8 {
                for x in 0..8 {
                    let (ix, iy) = (bx + x, by + y);
                    if ix < width && iy < height {
                        out[iy * width + ix] = pixels[y * 8 + x] + 128.0;
                    }
                }
            }
        }
    }
    out
}

/// Applies JPEG's lossy DCT quantization round-trip at `quality`.
pub fn jpeg_degrade(image: &ImageRGB8, quality: u8) -> Result<ImageRGB8> {
    let tables = QuantTables::for_quality(quality)?;
    let m = dct_matrix();
    let mut planes = rgb_to_ycbcr(image);
    let (w, h) = (image.width(), image.height());
    planes.y = degrade_plane(&planes.y, w, h, &tables.luma, &m);
    planes.cb = degrade_plane(&planes.cb, w, h, &tables.chroma, &m);
    planes.cr = degrade_plane(&planes.cr, w, h, &tables.chroma, &m);
    ycbcr_to_rgb(&planes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quality_50_uses_base_tables() {
        let t = QuantTables::for_quality(50).unwrap();
        assert_eq!(t.luma, BASE_LUMA_TABLE);
        assert_eq!(t.chroma, BASE_CHROMA_TABLE);
    }

    #[test]
    fn quality_extremes() {
        assert!(QuantTables::for_quality(100).unwrap().luma.iter().all(|&v| v == 1));
        assert!(QuantTables::for_quality(1).unwrap().luma.iter().all(|&v| v == 255 || v >= 16 * 50));
        assert!(QuantTables::for_quality(0).is_err());
        assert!(QuantTables::for_quality(101).is_err());
        assert!(jpeg_degrade(&ImageRGB8::filled(8, 8, [0; 3]).unwrap(), 0).is_err());
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let m = dct_matrix();
        for i in 0..8 {
            for j in 0..8 {
                let dot: f64 = (0..8).map(|k| m[i][k] * m[j][k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mid_gray_is_a_fixed_point() {
        let img = ImageRGB8::filled(13, 9, [128, 128, 128]).unwrap();
        for q in [1, 10, 50, 75, 100] {
            assert_eq!(jpeg_degrade(&img, q).unwrap(), img);
        }
    }

    #[test]
    fn dimensions_preserved_for_ragged_sizes() {
        let img = ImageRGB8::from_fn(11, 5, |x, y| [(x * 20) as u8, (y * 40) as u8, 7]).unwrap();
        let out = jpeg_degrade(&img, 60).unwrap();
        assert_eq!((out.width(), out.height()), (11, 5));
    }
}
