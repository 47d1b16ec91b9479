use std::fs;
use std::path::Path;

use super::{ImageError, ImageRGB8, Result};

/// Binary P6 with maxval 255: `P6\n<w> <h>\n255\n` followed by RGB bytes.
pub fn encode_ppm(image: &ImageRGB8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.reserve(image.pixels().len() * 3);
    for px in image.pixels() {
        out.extend_from_slice(px);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, message: impl Into<String>) -> ImageError {
        ImageError::Parse { offset: self.pos, message: message.into() }
    }

    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Parse { offset: start, message: format!("{what} out of range") })
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageRGB8> {
    let mut cur = Cursor { bytes, pos: 0 };
    if !bytes.starts_with(b"P6") {
        return Err(cur.err("missing P6 magic"));
    }
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(cur.err(format!("maxval {maxval} unsupported (need 255)")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected single whitespace after maxval")),
    }
    if width == 0 || height == 0 {
        return Err(cur.err(format!("dimensions {width}x{height} must be positive")));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| cur.err("dimensions overflow"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(cur.err(format!(
            "truncated pixel payload: expected {expected} bytes, found {}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(ImageError::Parse {
            offset: cur.pos + expected,
            message: format!("{} trailing bytes after pixel payload", payload.len() - expected),
        });
    }
    let pixels = payload.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    ImageRGB8::new(width, height, pixels)
}

pub fn save_ppm(image: &ImageRGB8, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(image))?;
    Ok(())
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<ImageRGB8> {
    decode_ppm(&fs::read(path)?)
}
