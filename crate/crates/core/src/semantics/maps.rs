use std::path::Path;

use super::pnm;
use crate::error::ensure;
use crate::{Error, Result};

/// Number of face-parsing categories used when nothing else is configured.
pub const DEFAULT_CLASSES: usize = 14;

/// Per-pixel semantic labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMap {
    height: usize,
    width: usize,
    classes: usize,
    labels: Vec<u8>,
}

impl SemanticMap {
    /// Labels are stored as bytes, so at most 256 classes are supported.
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<u8>) -> Result<Self> {
        ensure!(height > 0 && width > 0, "semantic map must be non-empty");
        ensure!(
            (1..=256).contains(&classes),
            "class count {classes} outside [1, 256]"
        );
        ensure!(
            labels.len() == height * width,
            "label count {} does not match {height}x{width}",
            labels.len()
        );
        if let Some(pos) = labels.iter().position(|&l| l as usize >= classes) {
            return Err(Error::contract(format!(
                "label {} at pixel {pos} is not below {classes}",
                labels[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            classes,
            labels,
        })
    }

    /// A map where every pixel carries label 0.
    pub fn uniform(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, 1, vec![0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn label(&self, y: usize, x: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn max_label(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    /// Pixel count per class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Writes raw label values as an 8-bit PGM.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        pnm::write_pgm(path, self.width, self.height, &self.labels)
    }

    pub fn load_pgm(path: impl AsRef<Path>, classes: usize) -> Result<Self> {
        let (w, h, bytes) = pnm::read_pgm(path)?;
        Self::new(h, w, classes, bytes)
    }
}

/// Known/corrupted pixel mask: `1` = known, `0` = corrupted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        ensure!(height > 0 && width > 0, "mask must be non-empty");
        ensure!(
            values.len() == height * width,
            "mask length {} does not match {height}x{width}",
            values.len()
        );
        if let Some(pos) = values.iter().position(|&v| v > 1) {
            return Err(Error::contract(format!(
                "mask value {} at pixel {pos} is not 0 or 1",
                values[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn all_known(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![1; height * width])
    }

    pub fn all_corrupted(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let values = (0..height * width)
            .map(|i| f(i / width, i % width) as u8)
            .collect();
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn is_known(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x] == 1
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// Swaps known and corrupted pixels.
    pub fn inverted(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| 1 - v).collect(),
        }
    }

    pub fn corrupted_fraction(&self) -> f64 {
        let corrupted = self.values.iter().filter(|&&v| v == 0).count();
        corrupted as f64 / self.values.len() as f64
    }

    /// Writes the mask as an 8-bit PGM with known pixels at 255.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.values.iter().map(|&v| v * 255).collect();
        pnm::write_pgm(path, self.width, self.height, &bytes)
    }

    /// Reads a 0/255 PGM; any other grey level is a format error.
    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let (w, h, bytes) = pnm::read_pgm(path)?;
        let mut values = Vec::with_capacity(bytes.len());
        for (i, &b) in bytes.iter().enumerate() {
            match b {
                0 => values.push(0),
                255 => values.push(1),
                other => {
                    return Err(Error::Format {
                        offset: i as u64,
                        message: format!(
                            "mask pixel {i} has grey level {other}, expected 0 or 255"
                        ),
                    })
                }
            }
        }
        Self::new(h, w, values)
    }
}
