//! Experiment driver: synthetic corpus, memory dynamics, full forward runs
//! and image-quality metrics.
//!
//! The style encoder of the full model is replaced by the affine map
//! `x ↦ 2x − 1` on RGB (see [`encode_style`]), so pooled latents stay in
//! `[-1, 1]` and fused features decode straight back to an image.

mod corpus;
mod gradients;
mod metrics;
mod pipeline;
mod sim;

pub use corpus::{gen_corpus, CorpusConfig, SyntheticSample};
pub use gradients::{check_loss_gradients, GradCheckRecord};
pub use metrics::{l1_metric, psnr, ssim, Metrics};
pub use pipeline::{run_pipeline, PipelineModels, PipelineOutput, PrototypeParser};
pub use sim::{run_memory_sim, BandMetrics, MemSimConfig, SimReport, StepRecord, UpdateMode};

use crate::numcore::Tensor3;

/// Style features of an image in `[0, 1]`.
pub fn encode_style(image: &Tensor3) -> Tensor3 {
    image.map(|v| 2.0 * v - 1.0)
}

/// Inverse of [`encode_style`], clamped to the valid pixel range.
pub fn decode_style(features: &Tensor3) -> Tensor3 {
    features.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}
