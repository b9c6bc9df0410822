//! Masked correlation mining and the fused forward pass.
//!
//! Two per-pixel channel projections give the "query" and "key" views of a
//! feature map. Both are cut into patches; `Φ[p][q]` is the dot product of
//! flattened patch `p` of the first view with patch `q` of the second. Each
//! patch of the raw feature map is then rebuilt as a `Φ`-weighted sum of all
//! patches, folded back, restricted to corrupted pixels and added to the
//! input.

use std::path::Path;

use crate::error::ensure;
use crate::numcore::matrix::softmax_f64;
use crate::numcore::{fold, unfold, Matrix, Tensor3};
use crate::semantics::{broadcast_latents, mask_fuse, BinaryMask, LatentMatrix, SemanticMap};
use crate::Result;

pub const DEFAULT_PATCH: usize = 3;
pub const DEFAULT_STRIDE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct McmConfig {
    pub patch_size: usize,
    pub stride: usize,
    /// `c × c` mixing applied to the first similarity branch.
    pub projection_a: Matrix,
    /// `c × c` mixing applied to the second similarity branch.
    pub projection_b: Matrix,
    /// Row-softmax `Φ` before aggregation.
    pub normalize_scores: bool,
}

impl McmConfig {
    /// Identity projections, 3×3 patches at stride 3, softmax scores.
    pub fn identity(channels: usize) -> Result<Self> {
        Ok(Self {
            patch_size: DEFAULT_PATCH,
            stride: DEFAULT_STRIDE,
            projection_a: Matrix::identity(channels)?,
            projection_b: Matrix::identity(channels)?,
            normalize_scores: true,
        })
    }

    pub fn with_geometry(mut self, patch_size: usize, stride: usize) -> Self {
        self.patch_size = patch_size;
        self.stride = stride;
        self
    }

    pub fn with_normalization(mut self, on: bool) -> Self {
        self.normalize_scores = on;
        self
    }

    /// Loads both projections from `MDT1` matrix files.
    pub fn with_projection_files(
        mut self,
        a: impl AsRef<Path>,
        b: impl AsRef<Path>,
    ) -> Result<Self> {
        self.projection_a = Matrix::load(a)?;
        self.projection_b = Matrix::load(b)?;
        Ok(self)
    }

    fn check_channels(&self, c: usize) -> Result<()> {
        for (name, p) in [("a", &self.projection_a), ("b", &self.projection_b)] {
            ensure!(
                p.rows() == c && p.cols() == c,
                "projection {name} is {}x{}, features have {c} channels",
                p.rows(),
                p.cols()
            );
        }
        Ok(())
    }
}

/// Patch-to-patch similarity `Φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub scores: Matrix,
    pub normalized: bool,
}

impl CorrelationMap {
    pub fn n_patches(&self) -> usize {
        self.scores.rows()
    }
}

/// Per-pixel channel mixing: `out[o] = Σ_i w[o][i] · f[i]`.
pub fn project(f: &Tensor3, w: &Matrix) -> Result<Tensor3> {
    ensure!(
        w.cols() == f.channels(),
        "projection expects {} channels, got {}",
        w.cols(),
        f.channels()
    );
    let plane = f.plane_len();
    let mut out = Vec::with_capacity(w.rows() * plane);
    for o in 0..w.rows() {
        let weights = w.row(o);
        for p in 0..plane {
            let acc: f64 = weights
                .iter()
                .enumerate()
                .map(|(i, &wi)| wi as f64 * f.as_slice()[i * plane + p] as f64)
                .sum();
            out.push(acc as f32);
        }
    }
    Tensor3::new(w.rows(), f.height(), f.width(), out)
}

pub fn patch_similarity(f: &Tensor3, cfg: &McmConfig) -> Result<CorrelationMap> {
    let (n, scores) = similarity_f64(f, cfg)?;
    Ok(CorrelationMap {
        scores: Matrix::new(n, n, scores.into_iter().map(|v| v as f32).collect())?,
        normalized: cfg.normalize_scores,
    })
}

/// Row-major `n × n` scores, kept in `f64` for aggregation.
fn similarity_f64(f: &Tensor3, cfg: &McmConfig) -> Result<(usize, Vec<f64>)> {
    cfg.check_channels(f.channels())?;
    let a = unfold(&project(f, &cfg.projection_a)?, cfg.patch_size, cfg.stride)?;
    let b = unfold(&project(f, &cfg.projection_b)?, cfg.patch_size, cfg.stride)?;
    let n = a.count();
    let mut scores = Vec::with_capacity(n * n);
    for p in 0..n {
        let row: Vec<f64> = (0..n)
            .map(|q| {
                a.patch(p)
                    .iter()
                    .zip(b.patch(q))
                    .map(|(&x, &y)| x as f64 * y as f64)
                    .sum()
            })
            .collect();
        if cfg.normalize_scores {
            scores.extend(softmax_f64(&row));
        } else {
            scores.extend(row);
        }
    }
    Ok((n, scores))
}

/// Correlation-mined features before gating: every patch replaced by the
/// `Φ`-weighted sum of all patches, folded back to a map.
pub fn correlation_aggregate(f: &Tensor3, cfg: &McmConfig) -> Result<Tensor3> {
    let (n, phi) = similarity_f64(f, cfg)?;
    let patches = unfold(f, cfg.patch_size, cfg.stride)?;
    let len = patches.patch_len();
    let mut updated = Vec::with_capacity(n * len);
    for p in 0..n {
        let mut acc = vec![0.0f64; len];
        for (q, &w) in phi[p * n..(p + 1) * n].iter().enumerate() {
            for (s, &v) in acc.iter_mut().zip(patches.patch(q)) {
                *s += w * v as f64;
            }
        }
        updated.extend(acc.into_iter().map(|v| v as f32));
    }
    fold(&patches.with_data(updated)?)
}

/// Adds the correlation-mined features at corrupted pixels; known pixels
/// are returned unchanged.
pub fn mcm_enhance(f: &Tensor3, mask: &BinaryMask, cfg: &McmConfig) -> Result<Tensor3> {
    ensure!(
        (f.height(), f.width()) == mask.dims(),
        "mask {:?} does not match features {}x{}",
        mask.dims(),
        f.height(),
        f.width()
    );
    let mined = correlation_aggregate(f, cfg)?;
    Tensor3::from_fn(f.channels(), f.height(), f.width(), |c, y, x| {
        let base = f.get(c, y, x);
        if mask.is_known(y, x) {
            base
        } else {
            base + mined.get(c, y, x)
        }
    })
}

/// Broadcast memory and visible latents, fuse them under the mask, then
/// apply correlation mining.
pub fn mrem_forward(
    q_hat: &LatentMatrix,
    v: &LatentMatrix,
    s: &SemanticMap,
    mask: &BinaryMask,
    cfg: &McmConfig,
) -> Result<Tensor3> {
    let f_mem = broadcast_latents(q_hat, s)?;
    let f_v = broadcast_latents(v, s)?;
    let fused = mask_fuse(&f_mem, &f_v, mask)?;
    mcm_enhance(&fused, mask, cfg)
}
