//! Minimal binary PGM (P5) reader/writer and PPM (P6) writer.

use std::fs;
use std::path::Path;

use crate::error::ensure;
use crate::numcore::Tensor3;
use crate::{Error, Result};

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    fs::write(path, out)?;
    Ok(())
}

/// Returns `(width, height, pixels)`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    parse_pgm(&fs::read(path)?)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(0, "not a binary PGM (missing P5)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and `#` comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos, "expected a header number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::format(start, "header number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(pos, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(pos, "zero image dimension"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(pos, "missing separator after header"));
    }
    pos += 1;
    let need = width * height;
    if bytes.len() - pos != need {
        return Err(Error::format(
            pos,
            format!("expected {need} pixel bytes, found {}", bytes.len() - pos),
        ));
    }
    Ok((width, height, bytes[pos..].to_vec()))
}

/// Writes a 3-channel image with values in `[0, 1]` as 8-bit PPM.
/// Values are clamped then rounded.
pub fn write_ppm(path: impl AsRef<Path>, image: &Tensor3) -> Result<()> {
    ensure!(
        image.channels() == 3,
        "PPM needs 3 channels, got {}",
        image.channels()
    );
    let (h, w) = (image.height(), image.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = image.get(c, y, x).clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}
