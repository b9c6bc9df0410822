//! Procedural "faces": a jittered Voronoi layout with one cell per class,
//! each class painted with a style drawn from a small per-class palette and
//! a seeded sinusoidal texture.

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::ensure;
use crate::numcore::Tensor3;
use crate::semantics::{generate_irregular_mask, BinaryMask, MaskBand, SemanticMap};
use crate::{Error, Result};

const LAYOUT_RETRIES: usize = 100;
const TEXTURE_AMPLITUDE: f32 = 0.08;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// RGB in `[0, 1]`.
    pub image: Tensor3,
    pub semantic: SemanticMap,
    pub mask: BinaryMask,
    pub seed: u64,
}

impl SyntheticSample {
    pub fn band(&self) -> Option<MaskBand> {
        MaskBand::of_fraction(self.mask.corrupted_fraction())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Colour variants per class; each sample picks one per class.
    pub styles_per_class: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            count: 32,
            height: 48,
            width: 48,
            classes: 4,
            styles_per_class: 4,
            seed: 7,
        }
    }
}

/// Shorthand for [`CorpusConfig`] with the default palette size.
pub fn gen_corpus(
    count: usize,
    height: usize,
    width: usize,
    classes: usize,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    CorpusConfig {
        count,
        height,
        width,
        classes,
        seed,
        ..CorpusConfig::default()
    }
    .generate()
}

impl CorpusConfig {
    /// Sample masks cycle through the three evaluation bands.
    pub fn generate(&self) -> Result<Vec<SyntheticSample>> {
        ensure!(
            self.classes >= 2,
            "need at least 2 classes, got {}",
            self.classes
        );
        ensure!(self.classes <= 256, "at most 256 classes are supported");
        ensure!(
            self.styles_per_class >= 1,
            "need at least one style per class"
        );
        ensure!(self.height > 0 && self.width > 0, "image must be non-empty");
        if self.height * self.width < self.classes {
            return Err(Error::Diagnostic(format!(
                "{}x{} image cannot hold {} classes",
                self.height, self.width, self.classes
            )));
        }
        let mut master = ChaCha8Rng::seed_from_u64(self.seed);
        let palette: Vec<Vec<[f32; 3]>> = (0..self.classes)
            .map(|_| {
                (0..self.styles_per_class)
                    .map(|_| std::array::from_fn(|_| master.random_range(0.15..0.85)))
                    .collect()
            })
            .collect();
        let anchors = anchor_grid(self.classes);
        (0..self.count)
            .map(|idx| {
                let seed = master.random::<u64>();
                self.sample(idx, seed, &palette, &anchors)
            })
            .collect()
    }

    fn sample(
        &self,
        idx: usize,
        seed: u64,
        palette: &[Vec<[f32; 3]>],
        anchors: &[(f32, f32)],
    ) -> Result<SyntheticSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (self.height, self.width);
        let semantic = self.layout(&mut rng, anchors)?;
        let styles: Vec<[f32; 3]> = palette
            .iter()
            .map(|p| p[rng.random_range(0..p.len())])
            .collect();
        let waves: Vec<(f32, f32, f32)> = (0..self.classes)
            .map(|_| {
                (
                    rng.random_range(0.5..3.0),
                    rng.random_range(0.5..3.0),
                    rng.random_range(0.0..TAU),
                )
            })
            .collect();
        let image = Tensor3::from_fn(3, h, w, |c, y, x| {
            let l = semantic.label(y, x);
            let (fy, fx, phase) = waves[l];
            let t = TAU * (fy * y as f32 / h as f32 + fx * x as f32 / w as f32) + phase;
            (styles[l][c] + TEXTURE_AMPLITUDE * (t + c as f32).sin()).clamp(0.0, 1.0)
        })?;
        let band = MaskBand::ALL[idx % MaskBand::ALL.len()];
        let mask = generate_irregular_mask(h, w, band.center(), rng.random())?;
        Ok(SyntheticSample {
            image,
            semantic,
            mask,
            seed,
        })
    }

    /// Nearest-site labelling. Every class owns its own site pixel, so every
    /// class is present as long as the sites are distinct.
    fn layout(&self, rng: &mut ChaCha8Rng, anchors: &[(f32, f32)]) -> Result<SemanticMap> {
        let (h, w) = (self.height, self.width);
        for _ in 0..LAYOUT_RETRIES {
            let sites: Vec<(usize, usize)> = anchors
                .iter()
                .map(|&(ay, ax)| {
                    let jy = ay + rng.random_range(-0.08..0.08);
                    let jx = ax + rng.random_range(-0.08..0.08);
                    (
                        ((jy.clamp(0.0, 1.0) * h as f32) as usize).min(h - 1),
                        ((jx.clamp(0.0, 1.0) * w as f32) as usize).min(w - 1),
                    )
                })
                .collect();
            let mut unique = sites.clone();
            unique.sort_unstable();
            unique.dedup();
            if unique.len() != sites.len() {
                continue;
            }
            let mut labels = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    let nearest = sites
                        .iter()
                        .enumerate()
                        .min_by_key(|(_, &(sy, sx))| {
                            let (dy, dx) = (sy as i64 - y as i64, sx as i64 - x as i64);
                            dy * dy + dx * dx
                        })
                        .map(|(i, _)| i)
                        .unwrap();
                    labels.push(nearest as u8);
                }
            }
            let map = SemanticMap::new(h, w, self.classes, labels)?;
            if map.histogram().iter().all(|&k| k > 0) {
                return Ok(map);
            }
        }
        Err(Error::Diagnostic(format!(
            "no layout with all {} classes on {h}x{w} after {LAYOUT_RETRIES} tries",
            self.classes
        )))
    }
}

/// Class anchors spread on a near-square grid in unit coordinates.
fn anchor_grid(classes: usize) -> Vec<(f32, f32)> {
    let cols = (classes as f32).sqrt().ceil() as usize;
    let rows = classes.div_ceil(cols);
    (0..classes)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            (
                (r as f32 + 0.5) / rows as f32,
                (c as f32 + 0.5) / cols as f32,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = gen_corpus(4, 24, 24, 4, 3).unwrap();
        let b = gen_corpus(4, 24, 24, 4, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_corpus(4, 24, 24, 4, 4).unwrap());
    }

    #[test]
    fn every_class_present_and_pixels_in_range() {
        for s in gen_corpus(6, 20, 28, 4, 11).unwrap() {
            let labels: std::collections::BTreeSet<u8> =
                s.semantic.labels().iter().copied().collect();
            assert_eq!(labels.into_iter().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
            assert!(s.image.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(s.band().is_some());
        }
    }

    #[test]
    fn many_classes_still_fit() {
        let c = gen_corpus(2, 32, 32, 14, 1).unwrap();
        assert!(c
            .iter()
            .all(|s| s.semantic.histogram().iter().all(|&k| k > 0)));
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(matches!(gen_corpus(1, 8, 8, 1, 0), Err(Error::Contract(_))));
        assert!(matches!(
            CorpusConfig {
                height: 1,
                width: 2,
                classes: 3,
                ..Default::default()
            }
            .generate(),
            Err(Error::Diagnostic(_))
        ));
    }

    #[test]
    fn masks_cycle_through_bands() {
        let c = gen_corpus(3, 32, 32, 3, 5).unwrap();
        let bands: Vec<_> = c.iter().map(|s| s.band().unwrap()).collect();
        assert_eq!(bands, MaskBand::ALL.to_vec());
    }
}
