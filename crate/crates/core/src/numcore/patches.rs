use super::Tensor3;
use crate::error::ensure;
use crate::Result;

/// Square patches cut from a feature map, plus the geometry needed to fold
/// them back.
///
/// Patch `k` occupies `data[k * patch_len .. (k + 1) * patch_len]` and is
/// laid out `(channel, row, column)`. Patches are enumerated row-major over
/// their top-left positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    channels: usize,
    patch_size: usize,
    stride: usize,
    src_height: usize,
    src_width: usize,
    data: Vec<f32>,
}

/// Checks the tiling geometry and returns the patch grid `(rows, cols)`.
///
/// The stride may not exceed the patch size, otherwise some pixels would
/// belong to no patch and folding could not restore them.
pub(crate) fn patch_grid(
    height: usize,
    width: usize,
    patch: usize,
    stride: usize,
) -> Result<(usize, usize)> {
    ensure!(patch > 0 && stride > 0, "patch and stride must be positive");
    ensure!(
        patch <= height && patch <= width,
        "patch {patch} larger than {height}x{width} map"
    );
    ensure!(
        stride <= patch,
        "stride {stride} exceeds patch {patch}; pixels would be skipped"
    );
    ensure!(
        (height - patch).is_multiple_of(stride) && (width - patch).is_multiple_of(stride),
        "{height}x{width} map does not tile with patch {patch} stride {stride}"
    );
    Ok(((height - patch) / stride + 1, (width - patch) / stride + 1))
}

impl PatchSet {
    pub fn count(&self) -> usize {
        self.data.len() / self.patch_len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn source_dims(&self) -> (usize, usize) {
        (self.src_height, self.src_width)
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn patch(&self, k: usize) -> &[f32] {
        let n = self.patch_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Replaces the patch contents, keeping the fold geometry.
    pub fn with_data(&self, data: Vec<f32>) -> Result<PatchSet> {
        ensure!(
            data.len() == self.data.len(),
            "patch data length {} does not match {}",
            data.len(),
            self.data.len()
        );
        Ok(PatchSet {
            data,
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> PatchSet {
        PatchSet {
            channels: self.channels,
            patch_size: self.patch_size,
            stride: self.stride,
            src_height: self.src_height,
            src_width: self.src_width,
            data: Vec::new(),
        }
    }

    /// Top-left corner of patch `k` in source coordinates.
    pub fn origin(&self, k: usize) -> (usize, usize) {
        let cols = (self.src_width - self.patch_size) / self.stride + 1;
        ((k / cols) * self.stride, (k % cols) * self.stride)
    }
}

pub fn unfold(f: &Tensor3, patch: usize, stride: usize) -> Result<PatchSet> {
    let (grid_rows, grid_cols) = patch_grid(f.height(), f.width(), patch, stride)?;
    let (channels, _, _) = f.shape();
    let mut data = Vec::with_capacity(grid_rows * grid_cols * channels * patch * patch);
    for gy in 0..grid_rows {
        for gx in 0..grid_cols {
            let (oy, ox) = (gy * stride, gx * stride);
            for c in 0..channels {
                for dy in 0..patch {
                    for dx in 0..patch {
                        data.push(f.get(c, oy + dy, ox + dx));
                    }
                }
            }
        }
    }
    Ok(PatchSet {
        channels,
        patch_size: patch,
        stride,
        src_height: f.height(),
        src_width: f.width(),
        data,
    })
}

/// Reassembles patches into a feature map. Pixels covered by several
/// patches receive the mean of their contributions.
pub fn fold(p: &PatchSet) -> Result<Tensor3> {
    let (grid_rows, grid_cols) = patch_grid(p.src_height, p.src_width, p.patch_size, p.stride)?;
    ensure!(p.channels > 0, "patch set has no channels");
    ensure!(
        p.data.len() == grid_rows * grid_cols * p.patch_len(),
        "patch data length {} inconsistent with {} patches of {} values",
        p.data.len(),
        grid_rows * grid_cols,
        p.patch_len()
    );
    let (h, w, ps) = (p.src_height, p.src_width, p.patch_size);
    let mut sums = vec![0.0f64; p.channels * h * w];
    let mut counts = vec![0u32; h * w];
    for k in 0..grid_rows * grid_cols {
        let (oy, ox) = p.origin(k);
        let patch = p.patch(k);
        for c in 0..p.channels {
            for dy in 0..ps {
                for dx in 0..ps {
                    let v = patch[(c * ps + dy) * ps + dx];
                    sums[(c * h + oy + dy) * w + ox + dx] += v as f64;
                }
            }
        }
        for dy in 0..ps {
            for dx in 0..ps {
                counts[(oy + dy) * w + ox + dx] += 1;
            }
        }
    }
    let data = sums
        .iter()
        .enumerate()
        .map(|(i, &s)| (s / counts[i % (h * w)] as f64) as f32)
        .collect();
    Tensor3::new(p.channels, h, w, data)
}
