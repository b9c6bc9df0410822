//! `MDT1` binary format for tensors and matrices: 4 magic bytes, then the
//! dimensions as little-endian `u32` (three for a tensor, two for a matrix),
//! then the values as little-endian `f32` in row-major order.

use std::fs;
use std::path::Path;

use super::{Matrix, Tensor3};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MDT1";

fn encode(dims: &[usize], values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + 4 * values.len());
    out.extend_from_slice(MAGIC);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Little-endian cursor that reports the byte offset of any failure.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos,
                format!(
                    "truncated: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn dim(&mut self) -> Result<usize> {
        let at = self.pos;
        match self.u32()? {
            0 => Err(Error::format(at, "zero dimension")),
            d => Ok(d as usize),
        }
    }

    /// Reads `count` floats; checks the remaining length up front so a huge
    /// declared size fails fast instead of allocating.
    pub(crate) fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let need = count.saturating_mul(4);
        let raw = self.take(need)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn product(dims: &[usize], at: usize) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(at, "dimension product overflows"))
}

impl Tensor3 {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(
            &[self.channels(), self.height(), self.width()],
            self.as_slice(),
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let dims = [r.dim()?, r.dim()?, r.dim()?];
        let data = r.f32s(product(&dims, 4)?)?;
        r.finish()?;
        Tensor3::new(dims[0], dims[1], dims[2], data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl Matrix {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(&[self.rows(), self.cols()], self.as_slice())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let dims = [r.dim()?, r.dim()?];
        let data = r.f32s(product(&dims, 4)?)?;
        r.finish()?;
        Matrix::new(dims[0], dims[1], data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
