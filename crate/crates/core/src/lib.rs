//! Numerical building blocks for memory-guided face inpainting.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: dense `f32` arrays, matrix product, row softmax, patch
//!   unfold/fold and a central-difference gradient checker.
//! - [`semantics`]: label maps, binary masks, region-wise average pooling,
//!   latent broadcast, mask-gated fusion and brush-stroke mask generation.
//! - [`dmm`]: per-semantic slot memory with cosine slot selection, EMA
//!   updates and soft-score reads.
//! - [`mcm`]: masked patch-correlation mining and the fused forward pass
//!   that produces the refinement features.
//! - [`losses`]: the full objective stack with analytic gradients for the
//!   reconstruction and total-variation terms.
//! - [`harness`]: synthetic corpus, memory simulation, pipeline runs and
//!   image-quality metrics.
//!
//! Mask polarity is fixed crate-wide: `1` marks a known pixel, `0` a
//! corrupted one.

pub mod config;
pub mod dmm;
mod error;
pub mod harness;
pub mod losses;
pub mod mcm;
pub mod numcore;
pub mod semantics;

pub use error::{Error, Result};
