//! Binary greyscale PGM (P5) with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major values in [0, 1].
    pub pixels: Vec<f64>,
}

/// `round(v * 255)` with halves rounded away from zero.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round() as u8
}

pub fn encode_pgm(img: &GrayImage) -> Result<Vec<u8>> {
    if img.pixels.len() != img.width * img.height {
        return Err(Error::shape(format!(
            "{} pixels for a {}x{} image",
            img.pixels.len(),
            img.width,
            img.height
        )));
    }
    if let Some(v) = img.pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Range(format!("pixel value {v} outside [0, 1]")));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| quantize(v)));
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_space(&mut self) {
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
        self.skip_space();
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
            .ok_or_else(|| Error::Parse {
                offset: start,
                msg: format!("{what} out of range"),
            })
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut c = Cursor { bytes, pos: 0 };
    if !bytes.starts_with(b"P5") {
        return Err(c.err("missing P5 magic"));
    }
    c.pos = 2;
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(c.err(format!("unsupported maxval {maxval}")));
    }
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(c.err("expected whitespace after header"));
    }
    c.pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| c.err("image dimensions overflow"))?;
    let data = &bytes[c.pos..];
    if data.len() < n {
        c.pos = bytes.len();
        return Err(c.err(format!("truncated pixel data: {} of {n} bytes", data.len())));
    }
    let m = maxval as f64;
    Ok(GrayImage {
        width,
        height,
        pixels: data[..n].iter().map(|&b| (b as f64 / m).min(1.0)).collect(),
    })
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let bytes = encode_pgm(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_rounds_up() {
        let img = GrayImage { width: 3, height: 2, pixels: vec![0.5; 6] };
        let bytes = encode_pgm(&img).unwrap();
        assert!(bytes.ends_with(&[128; 6]));
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
    }

    #[test]
    fn malformed() {
        for (bytes, at_least) in [
            (&b"P6\n2 2\n255\n...."[..], 0),
            (&b"P5\n2 x\n255\n...."[..], 4),
            (&b"P5\n2 2\n255\n..."[..], 11),
            (&b"P5\n2 2\n65535\n...."[..], 12),
            (&b""[..], 0),
        ] {
            match decode_pgm(bytes) {
                Err(Error::Parse { offset, .. }) => assert!(offset >= at_least),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn comments_and_out_of_range() {
        let img = decode_pgm(b"P5 # made by hand\n1 1 255\n\xff").unwrap();
        assert_eq!(img.pixels, vec![1.0]);
        let bad = GrayImage { width: 1, height: 1, pixels: vec![1.5] };
        assert!(encode_pgm(&bad).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let img = GrayImage { width: 2, height: 1, pixels: vec![0.25, 0.75] };
        write_pgm(&p, &img).unwrap();
        let back = read_pgm(&p).unwrap();
        assert!(back.pixels.iter().zip(&img.pixels).all(|(a, b)| (a - b).abs() <= 1.0 / 255.0));
        assert!(matches!(read_pgm(&dir.path().join("missing.pgm")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_error_and_idempotence(px in prop::collection::vec(0.0f64..=1.0, 1..64)) {
            let img = GrayImage { width: px.len(), height: 1, pixels: px };
            let once = decode_pgm(&encode_pgm(&img).unwrap()).unwrap();
            for (a, b) in once.pixels.iter().zip(&img.pixels) {
                prop_assert!((a - b).abs() <= 1.0 / 255.0);
            }
            let twice = decode_pgm(&encode_pgm(&once).unwrap()).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
