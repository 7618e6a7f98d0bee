//! Binary 8-bit PGM (P5). Pixels map to [0, 1] as v / 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = image.image_dims()?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        image
            .data()
            .iter()
            // round half up, then clamp to the byte range
            .map(|&v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8),
    );
    Ok(out)
}

pub fn save_pgm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(image)?)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_pgm(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(
                "PGM header",
                start,
                format!("expected {what}"),
            ));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::format("PGM header", start, format!("{what} out of range")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format("PGM header", 0, "missing P5 magic"));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format("PGM header", cur.pos, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(Error::format(
            "PGM header",
            cur.pos,
            format!("maxval {maxval} unsupported, need 255"),
        ));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(Error::format(
                "PGM header",
                cur.pos,
                "expected whitespace after maxval",
            ))
        }
    }
    let need = width * height;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(Error::format(
            "PGM payload",
            cur.pos + payload.len(),
            format!("truncated: {} of {need} pixel bytes", payload.len()),
        ));
    }
    let data = payload[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::image(height, width, data)
}
