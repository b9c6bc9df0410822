//! Label maps, masks and the latent pathways between feature maps and
//! per-semantic vectors.

mod maps;
mod maskgen;
pub mod pnm;
mod pooling;

pub use maps::{BinaryMask, SemanticMap, DEFAULT_CLASSES};
pub use maskgen::{generate_irregular_mask, MaskBand};
pub use pooling::{broadcast_latents, mask_fuse, region_avg_pool, LatentMatrix};
