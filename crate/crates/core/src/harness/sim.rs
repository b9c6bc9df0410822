//! Standalone update/read dynamics of the slot memory on a corpus.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::pipeline::fuse;
use super::{decode_style, encode_style, Metrics, SyntheticSample};
use crate::config::KvConfig;
use crate::dmm::MemoryState;
use crate::error::ensure;
use crate::mcm::McmConfig;
use crate::semantics::{region_avg_pool, LatentMatrix, MaskBand};
use crate::{Error, Result};

/// How the samples of one step are written to memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    /// One update per sample, in sample order.
    PerSample,
    /// One update with Q and V averaged over the step's samples.
    BatchMean,
}

impl std::str::FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-sample" => Ok(Self::PerSample),
            "batch-mean" => Ok(Self::BatchMean),
            _ => Err(Error::contract(format!("unknown update mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemSimConfig {
    pub slots: usize,
    pub alpha: f32,
    pub steps: usize,
    /// Samples per step, taken cyclically from the corpus. Zero means the
    /// whole corpus.
    pub batch: usize,
    pub update_mode: UpdateMode,
    /// Standard deviation of Gaussian noise added to Q, if any.
    pub q_noise: Option<f64>,
    pub seed: u64,
}

impl Default for MemSimConfig {
    fn default() -> Self {
        Self {
            slots: 16,
            alpha: 0.99,
            steps: 200,
            batch: 0,
            update_mode: UpdateMode::PerSample,
            q_noise: None,
            seed: 7,
        }
    }
}

impl MemSimConfig {
    pub const KEYS: [&'static str; 7] = [
        "slots",
        "alpha",
        "steps",
        "batch",
        "update_mode",
        "degraded_q",
        "q_sigma",
    ];

    /// Reads the simulation keys, keeping defaults for missing ones.
    /// `degraded_q=true` enables Q noise with `q_sigma` (default 0.1).
    pub fn from_config(cfg: &KvConfig, seed: u64) -> Result<Self> {
        let d = Self::default();
        let degraded: bool = cfg.get_or("degraded_q", false)?;
        let sigma: f64 = cfg.get_or("q_sigma", 0.1)?;
        ensure!(
            sigma.is_finite() && sigma >= 0.0,
            "q_sigma must be nonnegative"
        );
        Ok(Self {
            slots: cfg.get_or("slots", d.slots)?,
            alpha: cfg.get_or("alpha", d.alpha)?,
            steps: cfg.get_or("steps", d.steps)?,
            batch: cfg.get_or("batch", d.batch)?,
            update_mode: cfg.get_or("update_mode", d.update_mode)?,
            q_noise: degraded.then_some(sigma),
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub retrieval_error: f64,
}

/// Reconstruction quality of the final memory for one mask band.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandMetrics {
    pub band: &'static str,
    pub samples: usize,
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub steps: Vec<StepRecord>,
    pub bands: Vec<BandMetrics>,
    /// Wall-clock time. Left out of the serialised report so reports of
    /// identical runs compare byte for byte.
    #[serde(skip)]
    pub runtime: Duration,
}

impl SimReport {
    pub fn initial_error(&self) -> Option<f64> {
        self.steps.first().map(|s| s.retrieval_error)
    }

    pub fn final_error(&self) -> Option<f64> {
        self.steps.last().map(|s| s.retrieval_error)
    }

    /// One JSON object per step, then one per band.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step serialises"));
            out.push('\n');
        }
        for b in &self.bands {
            out.push_str(&serde_json::to_string(b).expect("band serialises"));
            out.push('\n');
        }
        out
    }
}

struct Pair {
    q: LatentMatrix,
    v: LatentMatrix,
}

/// Runs `cfg.steps` update-then-read steps on a memory of `classes` blocks
/// and returns the trace plus per-band metrics of the final memory.
///
/// Q is pooled from each sample's full image (the best-case coarse
/// estimate), optionally perturbed by seeded Gaussian noise on its valid
/// rows; V is pooled from the known pixels. A step's retrieval error is the
/// mean over its samples of the mean `‖q̂_i − v_i‖` over valid V rows.
pub fn run_memory_sim(
    corpus: &[SyntheticSample],
    cfg: &MemSimConfig,
    mcm_cfg: &McmConfig,
) -> Result<(SimReport, MemoryState)> {
    ensure!(
        !corpus.is_empty(),
        "memory simulation needs a nonempty corpus"
    );
    let started = Instant::now();
    let classes = corpus[0].semantic.classes();
    let channels = corpus[0].image.channels();
    let mut mem = MemoryState::init(classes, cfg.slots, channels, cfg.alpha, cfg.seed)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = cfg
        .q_noise
        .map(|sigma| Normal::new(0.0, sigma).map_err(|e| Error::contract(e.to_string())))
        .transpose()?;

    let pairs: Vec<Pair> = corpus
        .iter()
        .map(|s| {
            ensure!(s.semantic.classes() == classes, "corpus mixes class counts");
            let style = encode_style(&s.image);
            Ok(Pair {
                q: region_avg_pool(&style, &s.semantic, None)?,
                v: region_avg_pool(&style, &s.semantic, Some(&s.mask))?,
            })
        })
        .collect::<Result<_>>()?;

    let batch = if cfg.batch == 0 {
        corpus.len()
    } else {
        cfg.batch
    };
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut cursor = 0;
    for step in 0..cfg.steps {
        let members: Vec<usize> = (0..batch).map(|k| (cursor + k) % corpus.len()).collect();
        cursor = (cursor + batch) % corpus.len();
        let queries: Vec<LatentMatrix> = members
            .iter()
            .map(|&i| match &noise {
                Some(dist) => pairs[i]
                    .q
                    .map_valid(|x| x + dist.sample(&mut noise_rng) as f32),
                None => pairs[i].q.clone(),
            })
            .collect();
        match cfg.update_mode {
            UpdateMode::PerSample => {
                for (q, &i) in queries.iter().zip(&members) {
                    mem.update(q, &pairs[i].v)?;
                }
            }
            UpdateMode::BatchMean => {
                let qs: Vec<&LatentMatrix> = queries.iter().collect();
                let vs: Vec<&LatentMatrix> = members.iter().map(|&i| &pairs[i].v).collect();
                mem.update(&mean_latents(&qs)?, &mean_latents(&vs)?)?;
            }
        }
        let mut err = 0.0;
        for (q, &i) in queries.iter().zip(&members) {
            err += retrieval_error(&mem.read(q)?.q_hat, &pairs[i].v);
        }
        steps.push(StepRecord {
            step: step + 1,
            retrieval_error: err / members.len() as f64,
        });
    }

    let bands = band_metrics(corpus, &mem, mcm_cfg)?;
    Ok((
        SimReport {
            steps,
            bands,
            runtime: started.elapsed(),
        },
        mem,
    ))
}

/// Row-wise mean over the matrices in which that row is valid.
fn mean_latents(ms: &[&LatentMatrix]) -> Result<LatentMatrix> {
    let (n, c) = (ms[0].n(), ms[0].c());
    let mut data = vec![0.0f32; n * c];
    let mut valid = vec![false; n];
    for i in 0..n {
        let rows: Vec<&[f32]> = ms
            .iter()
            .filter(|m| m.is_valid(i))
            .map(|m| m.row(i))
            .collect();
        if rows.is_empty() {
            continue;
        }
        valid[i] = true;
        for ch in 0..c {
            let s: f64 = rows.iter().map(|r| r[ch] as f64).sum();
            data[i * c + ch] = (s / rows.len() as f64) as f32;
        }
    }
    LatentMatrix::new(n, c, data, valid)
}

/// Mean Euclidean distance over rows where `v` is valid; 0 when none is.
fn retrieval_error(q_hat: &LatentMatrix, v: &LatentMatrix) -> f64 {
    let mut total = 0.0;
    let mut rows = 0usize;
    for i in (0..v.n()).filter(|&i| v.is_valid(i)) {
        let d2: f64 = q_hat
            .row(i)
            .iter()
            .zip(v.row(i))
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        total += d2.sqrt();
        rows += 1;
    }
    if rows == 0 {
        0.0
    } else {
        total / rows as f64
    }
}

fn band_metrics(
    corpus: &[SyntheticSample],
    mem: &MemoryState,
    mcm_cfg: &McmConfig,
) -> Result<Vec<BandMetrics>> {
    let mut acc = [(0usize, 0.0, 0.0, 0.0); 3];
    for s in corpus {
        let Some(band) = s.band() else { continue };
        let (_, features) = fuse(s, &s.image, mem, mcm_cfg)?;
        let m = Metrics::compute(&decode_style(&features), &s.image)?;
        let slot = &mut acc[MaskBand::ALL.iter().position(|&b| b == band).unwrap()];
        slot.0 += 1;
        slot.1 += m.l1;
        slot.2 += m.psnr;
        slot.3 += m.ssim;
    }
    Ok(MaskBand::ALL
        .iter()
        .zip(acc)
        .filter(|(_, a)| a.0 > 0)
        .map(|(band, (k, l1, psnr, ssim))| {
            let k_f = k as f64;
            BandMetrics {
                band: band.label(),
                samples: k,
                l1: l1 / k_f,
                psnr: psnr / k_f,
                ssim: ssim / k_f,
            }
        })
        .collect())
}
