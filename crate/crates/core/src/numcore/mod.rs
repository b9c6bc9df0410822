//! Dense array substrate shared by every other module.
//!
//! Storage is `f32`; reductions accumulate in `f64` in a fixed row-major
//! order so results are bit-reproducible across runs and platforms.

pub(crate) mod binfmt;
mod gradcheck;
pub(crate) mod matrix;
mod patches;
mod tensor;

pub use gradcheck::{grad_check, Parameters};
pub use matrix::{matmul, row_softmax, Matrix};
pub use patches::{fold, unfold, PatchSet};
pub use tensor::Tensor3;
