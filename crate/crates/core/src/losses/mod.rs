//! Objective functions for coordinated inpainting.
//!
//! Every `L1`-style norm here is a mean over elements, not a raw sum, so
//! values do not scale with image size. Pretrained networks (parser,
//! reconstruction encoder, VGG, PatchGAN) are replaced by the pluggable
//! [`RegionEncoder`], [`FeatureExtractor`] and [`Critic`] traits, with small
//! seeded reference implementations.

mod models;
mod terms;
mod total;

pub use models::{
    Critic, FeatureExtractor, IdentityExtractor, MixPoolExtractor, PatchCritic,
    PooledRegionEncoder, RegionEncoder, RegionLatents,
};
pub use terms::{
    adv_loss, gram, inco2_loss, inter_from_latents, inter_loss, intra_from_latents, intra_loss,
    perceptual_loss, rec_grad, rec_loss, semantic_loss, style_loss, tv_grad, tv_loss, AdvLoss,
};
pub use total::{total_loss, LossInputs, LossModels, LossReport, LossWeights};
