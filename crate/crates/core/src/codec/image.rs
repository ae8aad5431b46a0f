//! Binary PGM (P5) / PPM (P6) with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&c) = self.buf.get(self.pos) {
            if c == b'#' {
                while let Some(&c) = self.buf.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.buf.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(start, format!("{what} out of range")))
    }
}

/// Decodes a P5 or P6 file into a `1 x H x W` or `3 x H x W` tensor in `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::parse(0, "expected magic P5 or P6")),
    };
    let mut cur = Cursor { buf: bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    cur.skip_space_and_comments();
    let max_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::parse(max_at, format!("maxval {maxval} unsupported, only 255")));
    }
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(Error::parse(cur.pos, "expected single whitespace before pixel data")),
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(2, "zero image extent"));
    }
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::parse(2, "image extent overflows"))?;
    let data = &bytes[cur.pos..];
    if data.len() < n {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated pixel data: need {n} bytes, have {}", data.len()),
        ));
    }
    let plane = width * height;
    let mut out = vec![0.0; n];
    for (i, px) in data[..n].chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            out[c * plane + i] = f64::from(v) / 255.0;
        }
    }
    Tensor::from_vec(&[channels, height, width], out)
}

/// `round(v * 255)` clamped to `0..=255`.
#[inline]
pub fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Encodes a 1- or 3-channel tensor in `[0, 1]`.
pub fn encode_pnm(img: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = img.dims3()?;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::shape("encode_pnm", format!("need 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let d = img.data();
    out.reserve(c * plane);
    for i in 0..plane {
        for ch in 0..c {
            out.push(to_byte(d[ch * plane + i]));
        }
    }
    Ok(out)
}

/// Snaps values onto the 8-bit grid the file format can represent.
pub fn quantize_8bit(img: &Tensor) -> Tensor {
    img.map(|v| f64::from(to_byte(v)) / 255.0)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn write_image(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    std::fs::write(path, encode_pnm(img)?)?;
    Ok(())
}
