use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ensure;
use crate::mcm::project;
use crate::numcore::{Matrix, Tensor3};
use crate::semantics::{region_avg_pool, BinaryMask, SemanticMap};
use crate::Result;

/// Multi-layer feature transform standing in for a pretrained backbone.
///
/// Implementations must be stateless after construction and produce layer
/// shapes that depend only on the input shape.
pub trait FeatureExtractor: Send + Sync {
    fn layers(&self, image: &Tensor3) -> Result<Vec<Tensor3>>;
}

/// A single layer that returns the input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn layers(&self, image: &Tensor3) -> Result<Vec<Tensor3>> {
        Ok(vec![image.clone()])
    }
}

/// Stack of seeded random channel mixings, each followed by ReLU and a 2×2
/// mean pool (odd trailing rows/columns are dropped; a side of length 1 is
/// kept as is).
#[derive(Debug, Clone, PartialEq)]
pub struct MixPoolExtractor {
    mixes: Vec<Matrix>,
}

impl MixPoolExtractor {
    pub fn new(in_channels: usize, widths: &[usize], seed: u64) -> Result<Self> {
        ensure!(!widths.is_empty(), "extractor needs at least one layer");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mixes = Vec::with_capacity(widths.len());
        let mut c_in = in_channels;
        for &c_out in widths {
            let scale = 1.0 / (c_in as f32).sqrt();
            let data = (0..c_out * c_in)
                .map(|_| rng.random_range(-1.0..1.0) * scale)
                .collect();
            mixes.push(Matrix::new(c_out, c_in, data)?);
            c_in = c_out;
        }
        Ok(Self { mixes })
    }

    /// Two layers of 8 and 16 channels.
    pub fn standard(in_channels: usize, seed: u64) -> Result<Self> {
        Self::new(in_channels, &[8, 16], seed)
    }
}

fn mean_pool2(f: &Tensor3) -> Result<Tensor3> {
    let (c, h, w) = f.shape();
    let (oh, ow) = ((h / 2).max(1), (w / 2).max(1));
    let (sy, sx) = (if h >= 2 { 2 } else { 1 }, if w >= 2 { 2 } else { 1 });
    let k = (sy * sx) as f64;
    Tensor3::from_fn(c, oh, ow, |ch, y, x| {
        let mut acc = 0.0f64;
        for dy in 0..sy {
            for dx in 0..sx {
                acc += f.get(ch, y * sy + dy, x * sx + dx) as f64;
            }
        }
        (acc / k) as f32
    })
}

impl FeatureExtractor for MixPoolExtractor {
    fn layers(&self, image: &Tensor3) -> Result<Vec<Tensor3>> {
        let mut out = Vec::with_capacity(self.mixes.len());
        let mut x = image.clone();
        for mix in &self.mixes {
            x = mean_pool2(&project(&x, mix)?.map(|v| v.max(0.0)))?;
            out.push(x.clone());
        }
        Ok(out)
    }
}

/// Latents of the corrupted region (`masked`) and the known region (`known`),
/// one row per semantic category.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionLatents {
    pub masked: Matrix,
    pub known: Matrix,
}

/// Encoder that turns an image into per-region latent rows for the
/// relational (InCo²) losses.
pub trait RegionEncoder: Send + Sync {
    fn encode(
        &self,
        image: &Tensor3,
        mask: &BinaryMask,
        regions: &SemanticMap,
    ) -> Result<RegionLatents>;
}

/// Seeded channel mixing with `tanh`, followed by region-wise average
/// pooling over corrupted and known pixels. Categories with no pixels on a
/// side give zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledRegionEncoder {
    mix: Matrix,
}

impl PooledRegionEncoder {
    pub fn new(in_channels: usize, out_channels: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (in_channels as f32).sqrt();
        let data = (0..out_channels * in_channels)
            .map(|_| rng.random_range(-1.0..1.0) * scale)
            .collect();
        Ok(Self {
            mix: Matrix::new(out_channels, in_channels, data)?,
        })
    }

    pub fn from_matrix(mix: Matrix) -> Self {
        Self { mix }
    }
}

impl RegionEncoder for PooledRegionEncoder {
    fn encode(
        &self,
        image: &Tensor3,
        mask: &BinaryMask,
        regions: &SemanticMap,
    ) -> Result<RegionLatents> {
        let feats = project(image, &self.mix)?.map(f32::tanh);
        let masked = region_avg_pool(&feats, regions, Some(&mask.inverted()))?;
        let known = region_avg_pool(&feats, regions, Some(mask))?;
        Ok(RegionLatents {
            masked: masked.to_matrix(),
            known: known.to_matrix(),
        })
    }
}

/// Patch-level realism scores in `(0, 1)`, standing in for a PatchGAN
/// discriminator.
pub trait Critic: Send + Sync {
    fn score(&self, image: &Tensor3) -> Result<Vec<f32>>;
}

/// Logistic score of a seeded linear read-out over the channel means of
/// non-overlapping `patch × patch` tiles (ragged border tiles are dropped).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCritic {
    weights: Vec<f32>,
    bias: f32,
    patch: usize,
}

impl PatchCritic {
    pub fn new(channels: usize, patch: usize, seed: u64) -> Result<Self> {
        ensure!(
            channels > 0 && patch > 0,
            "critic needs channels and a patch size"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..channels).map(|_| rng.random_range(-2.0..2.0)).collect();
        Ok(Self {
            weights,
            bias: rng.random_range(-0.5..0.5),
            patch,
        })
    }
}

impl Critic for PatchCritic {
    fn score(&self, image: &Tensor3) -> Result<Vec<f32>> {
        let (c, h, w) = image.shape();
        ensure!(
            c == self.weights.len(),
            "critic expects {} channels, got {c}",
            self.weights.len()
        );
        let p = self.patch.min(h).min(w);
        let mut out = Vec::new();
        for ty in 0..h / p {
            for tx in 0..w / p {
                let mut logit = self.bias as f64;
                for (ch, &wc) in self.weights.iter().enumerate() {
                    let mut acc = 0.0f64;
                    for y in ty * p..(ty + 1) * p {
                        for x in tx * p..(tx + 1) * p {
                            acc += image.get(ch, y, x) as f64;
                        }
                    }
                    logit += wc as f64 * acc / (p * p) as f64;
                }
                out.push((1.0 / (1.0 + (-logit).exp())) as f32);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixpool_layer_shapes_follow_input() {
        let fx = MixPoolExtractor::standard(3, 1).unwrap();
        let layers = fx.layers(&Tensor3::filled(3, 9, 8, 0.5).unwrap()).unwrap();
        assert_eq!(layers[0].shape(), (8, 4, 4));
        assert_eq!(layers[1].shape(), (16, 2, 2));
        let other = fx.layers(&Tensor3::filled(3, 9, 8, 0.1).unwrap()).unwrap();
        assert_eq!(other[1].shape(), layers[1].shape());
    }

    #[test]
    fn encoder_is_deterministic_and_splits_regions() {
        let enc = PooledRegionEncoder::new(3, 4, 9).unwrap();
        let img = Tensor3::from_fn(3, 2, 2, |c, y, x| (c + y + x) as f32 * 0.1).unwrap();
        let mask = BinaryMask::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        let s = SemanticMap::new(2, 2, 2, vec![0, 1, 0, 1]).unwrap();
        let a = enc.encode(&img, &mask, &s).unwrap();
        assert_eq!(a, enc.encode(&img, &mask, &s).unwrap());
        assert_eq!((a.masked.rows(), a.masked.cols()), (2, 4));
        assert_ne!(a.masked, a.known);
        let none = enc
            .encode(&img, &BinaryMask::all_known(2, 2).unwrap(), &s)
            .unwrap();
        assert!(none.masked.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn critic_scores_are_probabilities() {
        let critic = PatchCritic::new(3, 4, 2).unwrap();
        let s = critic
            .score(&Tensor3::filled(3, 8, 12, 0.7).unwrap())
            .unwrap();
        assert_eq!(s.len(), 6);
        assert!(s.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}
