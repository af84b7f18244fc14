//! Binary PGM (P5, 8-bit) and grayscale PFM (Pf) codecs.

use std::fs;
use std::path::Path;

use super::ScalarField;
use crate::error::{Error, Result};

/// Reads an 8-bit P5 image, scaling intensities into `[0, 1]`.
pub fn read_image(path: impl AsRef<Path>) -> Result<ScalarField> {
    decode_pgm(&fs::read(path)?)
}

/// Writes `field` as 8-bit P5 after clamping to `[0, 1]`.
pub fn write_image(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm(field))?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<ScalarField> {
    decode_pfm(&fs::read(path)?)
}

pub fn write_field(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_pfm(field.width(), field.height(), field.values())?;
    fs::write(path, bytes)?;
    Ok(())
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("missing {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::parse(start, format!("non-ASCII {what}")))?;
        Ok((start, text))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let (at, text) = self.token(what)?;
        text.parse()
            .map_err(|_| Error::parse(at, format!("invalid {what} {text:?}")))
    }

    /// Consumes the single whitespace byte that separates header and payload.
    fn end(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(c) if c.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(Error::parse(
                self.pos,
                "header not terminated by whitespace",
            )),
        }
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<ScalarField> {
    let mut hdr = Header { bytes, pos: 0 };
    let (_, magic) = hdr.token("magic number")?;
    if magic != "P5" {
        return Err(Error::parse(0, format!("expected P5, found {magic:?}")));
    }
    let width: usize = hdr.number("width")?;
    let height: usize = hdr.number("height")?;
    let maxval_at = {
        hdr.skip_space_and_comments();
        hdr.pos
    };
    let maxval: u32 = hdr.number("maxval")?;
    if maxval != 255 {
        return Err(Error::parse(
            maxval_at,
            format!("unsupported maxval {maxval}"),
        ));
    }
    let start = hdr.end()?;
    let count = width
        .checked_mul(height)
        .ok_or_else(|| Error::parse(0, "image dimensions overflow"))?;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < count {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: {} of {count} bytes", payload.len()),
        ));
    }
    let values = payload[..count].iter().map(|&b| b as f64 / 255.0).collect();
    ScalarField::new(width, height, values)
}

pub fn encode_pgm(field: &ScalarField) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", field.width(), field.height()).into_bytes();
    out.extend(field.values().iter().map(|&v| quantize(v)));
    out
}

/// Clamp to `[0, 1]`, scale by 255, round half up.
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn decode_pfm(bytes: &[u8]) -> Result<ScalarField> {
    let mut hdr = Header { bytes, pos: 0 };
    let (_, magic) = hdr.token("magic number")?;
    if magic != "Pf" {
        return Err(Error::parse(0, format!("expected Pf, found {magic:?}")));
    }
    let width: usize = hdr.number("width")?;
    let height: usize = hdr.number("height")?;
    let scale_at = {
        hdr.skip_space_and_comments();
        hdr.pos
    };
    let scale: f64 = hdr.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::parse(scale_at, format!("invalid scale {scale}")));
    }
    let start = hdr.end()?;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::parse(0, "field dimensions overflow"))?;
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() != expected {
        return Err(Error::parse(
            start,
            format!(
                "byte count mismatch: expected {expected} payload bytes, found {}",
                payload.len()
            ),
        ));
    }
    let little = scale < 0.0;
    let mut values = vec![0.0; width * height];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        // file rows run bottom to top
        let (x, file_row) = (k % width, k / width);
        values[(height - 1 - file_row) * width + x] = v as f64;
    }
    ScalarField::new(width, height, values)
}

/// Encodes row-major `values` as a little-endian grayscale PFM.
///
/// Values must be finite and representable as `f32`.
pub fn encode_pfm(width: usize, height: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::Dimension(format!(
            "{} values for a {width}x{height} field",
            values.len()
        )));
    }
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(values.len() * 4);
    for row in (0..height).rev() {
        for &v in &values[row * width..(row + 1) * width] {
            let single = v as f32;
            if !single.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "value {v} cannot be stored as a finite 32-bit float"
                )));
            }
            out.extend_from_slice(&single.to_le_bytes());
        }
    }
    Ok(out)
}
