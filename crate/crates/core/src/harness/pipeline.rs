//! One forward pass: pool → memory read → fusion and correlation mining →
//! losses and metrics against the ground truth.

use serde::Serialize;

use super::{decode_style, encode_style, Metrics, SyntheticSample};
use crate::dmm::{MemoryState, ReadResult};
use crate::error::ensure;
use crate::losses::{
    total_loss, Critic, FeatureExtractor, LossInputs, LossModels, LossReport, LossWeights,
    MixPoolExtractor, PatchCritic, PooledRegionEncoder, RegionEncoder,
};
use crate::mcm::{mrem_forward, McmConfig};
use crate::numcore::Tensor3;
use crate::semantics::{region_avg_pool, SemanticMap};
use crate::Result;

const ENCODER_WIDTH: usize = 8;
const CRITIC_PATCH: usize = 8;

/// Nearest-prototype face parser: the logit of class `k` at a pixel is
/// `−sharpness · ‖pixel − prototype_k‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeParser {
    prototypes: Vec<[f32; 3]>,
    sharpness: f32,
}

impl PrototypeParser {
    pub fn new(prototypes: Vec<[f32; 3]>, sharpness: f32) -> Result<Self> {
        ensure!(prototypes.len() >= 2, "parser needs at least two classes");
        ensure!(
            sharpness.is_finite() && sharpness > 0.0,
            "sharpness must be positive"
        );
        Ok(Self {
            prototypes,
            sharpness,
        })
    }

    /// Prototypes are the mean colour of each class over the whole corpus.
    pub fn fit(corpus: &[SyntheticSample]) -> Result<Self> {
        ensure!(!corpus.is_empty(), "cannot fit a parser to an empty corpus");
        let classes = corpus[0].semantic.classes();
        let mut sums = vec![[0.0f64; 3]; classes];
        let mut counts = vec![0usize; classes];
        for s in corpus {
            ensure!(s.semantic.classes() == classes, "corpus mixes class counts");
            ensure!(s.image.channels() == 3, "parser expects RGB images");
            let (h, w) = s.semantic.dims();
            for y in 0..h {
                for x in 0..w {
                    let l = s.semantic.label(y, x);
                    counts[l] += 1;
                    for (c, acc) in sums[l].iter_mut().enumerate() {
                        *acc += s.image.get(c, y, x) as f64;
                    }
                }
            }
        }
        let prototypes = sums
            .iter()
            .zip(&counts)
            .map(|(s, &k)| s.map(|v| (v / k.max(1) as f64) as f32))
            .collect();
        Self::new(prototypes, 50.0)
    }

    pub fn classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn logits(&self, image: &Tensor3) -> Result<Tensor3> {
        ensure!(
            image.channels() == 3,
            "parser expects RGB, got {} channels",
            image.channels()
        );
        Tensor3::from_fn(self.classes(), image.height(), image.width(), |k, y, x| {
            let d2: f32 = (0..3)
                .map(|c| (image.get(c, y, x) - self.prototypes[k][c]).powi(2))
                .sum();
            -self.sharpness * d2
        })
    }
}

/// Reference stand-ins for every pretrained network the losses need.
pub struct PipelineModels {
    pub encoder: Box<dyn RegionEncoder>,
    pub extractor: Box<dyn FeatureExtractor>,
    pub critic: Box<dyn Critic>,
    pub parser: PrototypeParser,
}

impl PipelineModels {
    /// Seeded reference models for RGB input.
    pub fn reference(parser: PrototypeParser, seed: u64) -> Result<Self> {
        Ok(Self {
            encoder: Box::new(PooledRegionEncoder::new(3, ENCODER_WIDTH, seed)?),
            extractor: Box::new(MixPoolExtractor::standard(3, seed.wrapping_add(1))?),
            critic: Box::new(PatchCritic::new(3, CRITIC_PATCH, seed.wrapping_add(2))?),
            parser,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutput {
    /// Fused, correlation-mined style features.
    #[serde(skip)]
    pub features: Tensor3,
    /// `features` decoded to RGB.
    #[serde(skip)]
    pub image: Tensor3,
    #[serde(skip)]
    pub read: ReadResult,
    pub losses: LossReport,
    pub metrics: Metrics,
}

/// Q is pooled from `coarse` over the whole image, V from the known pixels
/// of the sample. Passing the sample's own image as `coarse` gives the
/// best-case coarse estimate.
pub fn run_pipeline(
    sample: &SyntheticSample,
    coarse: &Tensor3,
    mem: &MemoryState,
    mcm_cfg: &McmConfig,
    weights: &LossWeights,
    models: &PipelineModels,
) -> Result<PipelineOutput> {
    ensure!(
        coarse.same_shape(&sample.image),
        "coarse image {:?} does not match sample {:?}",
        coarse.shape(),
        sample.image.shape()
    );
    let (read, features) = fuse(sample, coarse, mem, mcm_cfg)?;
    let image = decode_style(&features);
    let logits_hat = models.parser.logits(&image)?;
    let losses = total_loss(
        &LossInputs {
            i_hat: &image,
            i_gt: &sample.image,
            mask: &sample.mask,
            regions: &sample.semantic,
            logits_hat: &logits_hat,
            labels_gt: &sample.semantic,
        },
        &LossModels {
            encoder: models.encoder.as_ref(),
            extractor: models.extractor.as_ref(),
            critic: models.critic.as_ref(),
        },
        weights,
    )?;
    let metrics = Metrics::compute(&image, &sample.image)?;
    Ok(PipelineOutput {
        features,
        image,
        read,
        losses,
        metrics,
    })
}

/// Memory read and MREM fusion only.
pub(crate) fn fuse(
    sample: &SyntheticSample,
    coarse: &Tensor3,
    mem: &MemoryState,
    mcm_cfg: &McmConfig,
) -> Result<(ReadResult, Tensor3)> {
    let s: &SemanticMap = &sample.semantic;
    let q = region_avg_pool(&encode_style(coarse), s, None)?;
    let v = region_avg_pool(&encode_style(&sample.image), s, Some(&sample.mask))?;
    let read = mem.read(&q)?;
    let features = mrem_forward(&read.q_hat, &v, s, &sample.mask, mcm_cfg)?;
    Ok((read, features))
}
