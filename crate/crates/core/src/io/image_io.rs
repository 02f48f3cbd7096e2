//! 2-D slice formats.
//!
//! * 16-bit binary PGM (`P5`): samples divided by maxval on read; written
//!   with maxval 65535, values clamped to `[0, 1]` and rounded half to even.
//!   Samples are big-endian as the Netpbm format requires; 8-bit files
//!   (maxval < 256) are accepted on read.
//! * `F32I`: ASCII header `F32I <H> <W>\n` followed by `H * W`
//!   little-endian `f32` values, row-major.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub const PGM_MAXVAL: u32 = 65535;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    F32i,
}

impl ImageFormat {
    /// From the file extension (`.pgm`, `.f32i`/`.f32`), case-insensitive.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("pgm") => Ok(ImageFormat::Pgm),
            Some("f32i") | Some("f32") => Ok(ImageFormat::F32i),
            _ => Err(Error::invalid(
                "image format",
                format!("{}: expected a .pgm or .f32i extension", path.display()),
            )),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::F32i => "f32i",
        }
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> HeaderReader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            what: self.what,
            offset: self.pos,
            reason: reason.into(),
        }
    }

    /// Skips whitespace and `#` comments.
    fn skip_blank(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_blank();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.fail("unexpected end of header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::Format {
            what: self.what,
            offset: start,
            reason: "header is not ASCII".into(),
        })
    }

    fn number(&mut self, name: &str) -> Result<usize> {
        self.skip_blank();
        let start = self.pos;
        let tok = self.token()?;
        tok.parse().map_err(|_| Error::Format {
            what: self.what,
            offset: start,
            reason: format!("invalid {name} `{tok}`"),
        })
    }

    /// Exactly one whitespace byte separates the header from the data.
    fn single_whitespace(&mut self) -> Result<()> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.fail("expected whitespace after header")),
        }
    }
}

fn expect_payload(bytes: &[u8], start: usize, need: usize, what: &'static str) -> Result<()> {
    let have = bytes.len() - start;
    if have < need {
        return Err(Error::Format {
            what,
            offset: bytes.len(),
            reason: format!("truncated data: expected {need} bytes after offset {start}, found {have}"),
        });
    }
    if have > need {
        return Err(Error::Format {
            what,
            offset: start + need,
            reason: format!("{} trailing bytes", have - need),
        });
    }
    Ok(())
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut r = HeaderReader { bytes, pos: 0, what: "PGM" };
    if r.token()? != "P5" {
        return Err(Error::Format {
            what: "PGM",
            offset: 0,
            reason: "expected magic `P5`".into(),
        });
    }
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval_at = r.pos;
    let maxval = r.number("maxval")?;
    if maxval == 0 || maxval > PGM_MAXVAL as usize {
        return Err(Error::Format {
            what: "PGM",
            offset: maxval_at,
            reason: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    r.single_whitespace()?;
    let start = r.pos;
    let wide = maxval > 255;
    let bpp = if wide { 2 } else { 1 };
    expect_payload(bytes, start, width * height * bpp, "PGM")?;
    let mx = maxval as f64;
    let payload = &bytes[start..];
    let data = if wide {
        payload
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / mx)
            .collect()
    } else {
        payload.iter().map(|&b| b as f64 / mx).collect()
    };
    Image::new(height, width, data)
}

/// Sample value written for an intensity.
pub fn quantize(v: f64) -> u16 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * PGM_MAXVAL as f64).round_ties_even() as u16
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let (h, w) = img.dims();
    let mut out = format!("P5\n{w} {h}\n{PGM_MAXVAL}\n").into_bytes();
    out.reserve(h * w * 2);
    for &v in img.data() {
        out.extend_from_slice(&quantize(v).to_be_bytes());
    }
    out
}

pub fn decode_f32i(bytes: &[u8]) -> Result<Image> {
    let mut r = HeaderReader { bytes, pos: 0, what: "F32I" };
    if r.token()? != "F32I" {
        return Err(Error::Format {
            what: "F32I",
            offset: 0,
            reason: "expected magic `F32I`".into(),
        });
    }
    let height = r.number("height")?;
    let width = r.number("width")?;
    if bytes.get(r.pos) != Some(&b'\n') {
        return Err(r.fail("expected newline after header"));
    }
    let start = r.pos + 1;
    expect_payload(bytes, start, height * width * 4, "F32I")?;
    let data = bytes[start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Image::new(height, width, data)
}

/// Values are narrowed to `f32`.
pub fn encode_f32i(img: &Image) -> Vec<u8> {
    let (h, w) = img.dims();
    let mut out = format!("F32I {h} {w}\n").into_bytes();
    out.reserve(h * w * 4);
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let format = ImageFormat::from_path(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        ImageFormat::Pgm => decode_pgm(&bytes),
        ImageFormat::F32i => decode_f32i(&bytes),
    }
    .map_err(|e| match e {
        Error::Format { what, offset, reason } => Error::Format {
            what,
            offset,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match ImageFormat::from_path(path)? {
        ImageFormat::Pgm => encode_pgm(img),
        ImageFormat::F32i => encode_f32i(img),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
