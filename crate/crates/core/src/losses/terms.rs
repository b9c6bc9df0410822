use super::{Critic, FeatureExtractor, RegionEncoder};
use crate::error::ensure;
use crate::numcore::{matmul, Matrix, Tensor3};
use crate::semantics::{BinaryMask, SemanticMap};
use crate::Result;

const PROB_CLAMP: f64 = 1e-7;

fn check_pair(a: &Tensor3, b: &Tensor3) -> Result<()> {
    ensure!(
        a.same_shape(b),
        "image shapes differ: {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    Ok(())
}

fn mean_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    sum / a.len() as f64
}

fn outer_rows(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul(a, &b.transpose())
}

/// `mean |A·Aᵀ − B·Bᵀ|` over the `n × n` self-similarity matrices.
pub fn intra_from_latents(m_hat: &Matrix, m_gt: &Matrix) -> Result<f64> {
    ensure!(
        (m_hat.rows(), m_hat.cols()) == (m_gt.rows(), m_gt.cols()),
        "latent shapes differ"
    );
    let a = outer_rows(m_hat, m_hat)?;
    let b = outer_rows(m_gt, m_gt)?;
    Ok(mean_abs_diff(a.as_slice(), b.as_slice()))
}

/// `mean |A·Âᵀ − B·B̂ᵀ|` over the cross-similarity matrices between the
/// corrupted-region latents and the known-region latents.
pub fn inter_from_latents(
    masked_hat: &Matrix,
    known_hat: &Matrix,
    masked_gt: &Matrix,
    known_gt: &Matrix,
) -> Result<f64> {
    let a = outer_rows(masked_hat, known_hat)?;
    let b = outer_rows(masked_gt, known_gt)?;
    ensure!(
        (a.rows(), a.cols()) == (b.rows(), b.cols()),
        "cross-similarity shapes differ"
    );
    Ok(mean_abs_diff(a.as_slice(), b.as_slice()))
}

pub fn intra_loss(
    i_hat: &Tensor3,
    i_gt: &Tensor3,
    mask: &BinaryMask,
    regions: &SemanticMap,
    enc: &dyn RegionEncoder,
) -> Result<f64> {
    check_pair(i_hat, i_gt)?;
    let a = enc.encode(i_hat, mask, regions)?;
    let b = enc.encode(i_gt, mask, regions)?;
    intra_from_latents(&a.masked, &b.masked)
}

pub fn inter_loss(
    i_hat: &Tensor3,
    i_gt: &Tensor3,
    mask: &BinaryMask,
    regions: &SemanticMap,
    enc: &dyn RegionEncoder,
) -> Result<f64> {
    check_pair(i_hat, i_gt)?;
    let a = enc.encode(i_hat, mask, regions)?;
    let b = enc.encode(i_gt, mask, regions)?;
    inter_from_latents(&a.masked, &a.known, &b.masked, &b.known)
}

/// Intra plus inter coordination loss, encoding each image once.
pub fn inco2_loss(
    i_hat: &Tensor3,
    i_gt: &Tensor3,
    mask: &BinaryMask,
    regions: &SemanticMap,
    enc: &dyn RegionEncoder,
) -> Result<f64> {
    check_pair(i_hat, i_gt)?;
    let a = enc.encode(i_hat, mask, regions)?;
    let b = enc.encode(i_gt, mask, regions)?;
    let intra = intra_from_latents(&a.masked, &b.masked)?;
    let inter = inter_from_latents(&a.masked, &a.known, &b.masked, &b.known)?;
    Ok(intra + inter)
}

/// Mean per-pixel cross entropy of `softmax(logits)` against the labels.
pub fn semantic_loss(logits_hat: &Tensor3, labels_gt: &SemanticMap) -> Result<f64> {
    ensure!(
        (logits_hat.height(), logits_hat.width()) == labels_gt.dims(),
        "logits {}x{} do not match labels {:?}",
        logits_hat.height(),
        logits_hat.width(),
        labels_gt.dims()
    );
    ensure!(
        labels_gt.max_label() < logits_hat.channels(),
        "label {} has no logit channel ({} channels)",
        labels_gt.max_label(),
        logits_hat.channels()
    );
    let k = logits_hat.channels();
    let mut total = 0.0f64;
    for y in 0..labels_gt.height() {
        for x in 0..labels_gt.width() {
            let max = (0..k)
                .map(|c| logits_hat.get(c, y, x) as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + (0..k)
                    .map(|c| (logits_hat.get(c, y, x) as f64 - max).exp())
                    .sum::<f64>()
                    .ln();
            total += lse - logits_hat.get(labels_gt.label(y, x), y, x) as f64;
        }
    }
    Ok(total / (labels_gt.height() * labels_gt.width()) as f64)
}

/// Mean absolute difference.
pub fn rec_loss(i_hat: &Tensor3, i_gt: &Tensor3) -> Result<f64> {
    check_pair(i_hat, i_gt)?;
    Ok(mean_abs_diff(i_hat.as_slice(), i_gt.as_slice()))
}

/// Gradient of [`rec_loss`] with respect to `i_hat`: `sign(Î − I)/count`,
/// zero at ties.
pub fn rec_grad(i_hat: &Tensor3, i_gt: &Tensor3) -> Result<Tensor3> {
    check_pair(i_hat, i_gt)?;
    let inv = 1.0 / i_hat.len() as f32;
    i_hat.zip_map(i_gt, |a, b| sign(a - b) * inv)
}

fn sign(d: f32) -> f32 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn perceptual_loss(i_hat: &Tensor3, i_gt: &Tensor3, fx: &dyn FeatureExtractor) -> Result<f64> {
    check_pair(i_hat, i_gt)?;
    let a = fx.layers(i_hat)?;
    let b = fx.layers(i_gt)?;
    let mut total = 0.0;
    for (la, lb) in a.iter().zip(&b) {
        total += rec_loss(la, lb)?;
    }
    Ok(total)
}

/// `F·Fᵀ / (c·h·w)` with `F` the `c × (h·w)` flattened channels.
pub fn gram(f: &Tensor3) -> Matrix {
    let (c, _, _) = f.shape();
    let norm = f.len() as f64;
    let mut data = vec![0.0f32; c * c];
    for i in 0..c {
        for j in i..c {
            let d: f64 = f
                .plane(i)
                .iter()
                .zip(f.plane(j))
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            let v = (d / norm) as f32;
            data[i * c + j] = v;
            data[j * c + i] = v;
        }
    }
    Matrix::new(c, c, data).expect("c is positive")
}

pub fn style_loss(i_hat: &Tensor3, i_gt: &Tensor3, fx: &dyn FeatureExtractor) -> Result<f64> {
    check_pair(i_hat, i_gt)?;
    let a = fx.layers(i_hat)?;
    let b = fx.layers(i_gt)?;
    Ok(a.iter()
        .zip(&b)
        .map(|(la, lb)| mean_abs_diff(gram(la).as_slice(), gram(lb).as_slice()))
        .sum())
}

/// Discriminator and generator sides of the adversarial objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvLoss {
    /// `−mean[log D(real)] − mean[log(1 − D(fake))]`
    pub discriminator: f64,
    /// Non-saturating `−mean[log D(fake)]`.
    pub generator: f64,
}

pub fn adv_loss(d_real: &[f32], d_fake: &[f32]) -> Result<AdvLoss> {
    ensure!(
        !d_real.is_empty() && !d_fake.is_empty(),
        "critic scores must be non-empty"
    );
    ensure!(
        d_real.iter().chain(d_fake).all(|p| (0.0..=1.0).contains(p)),
        "critic scores must be probabilities"
    );
    let clamp = |p: f32| (p as f64).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let mean = |xs: &[f32], f: &dyn Fn(f64) -> f64| {
        xs.iter().map(|&p| f(clamp(p))).sum::<f64>() / xs.len() as f64
    };
    let real = mean(d_real, &|p| p.ln());
    let fake_neg = mean(d_fake, &|p| (1.0 - p).ln());
    let fake = mean(d_fake, &|p| p.ln());
    Ok(AdvLoss {
        discriminator: -(real + fake_neg),
        generator: -fake,
    })
}

/// Convenience: score both images with `critic` and evaluate [`adv_loss`].
pub(crate) fn adv_from_critic(
    i_hat: &Tensor3,
    i_gt: &Tensor3,
    critic: &dyn Critic,
) -> Result<AdvLoss> {
    adv_loss(&critic.score(i_gt)?, &critic.score(i_hat)?)
}

/// Anisotropic total variation: `(Σ|∂x| + Σ|∂y|) / (c·h·w)`.
pub fn tv_loss(i: &Tensor3) -> f64 {
    let (c, h, w) = i.shape();
    let mut total = 0.0f64;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = i.get(ch, y, x) as f64;
                if x + 1 < w {
                    total += (i.get(ch, y, x + 1) as f64 - v).abs();
                }
                if y + 1 < h {
                    total += (i.get(ch, y + 1, x) as f64 - v).abs();
                }
            }
        }
    }
    total / i.len() as f64
}

pub fn tv_grad(i: &Tensor3) -> Tensor3 {
    let (c, h, w) = i.shape();
    let inv = 1.0 / i.len() as f32;
    let mut g = vec![0.0f32; i.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let here = i.index(ch, y, x);
                let v = i.get(ch, y, x);
                if x + 1 < w {
                    let s = sign(i.get(ch, y, x + 1) - v) * inv;
                    g[i.index(ch, y, x + 1)] += s;
                    g[here] -= s;
                }
                if y + 1 < h {
                    let s = sign(i.get(ch, y + 1, x) - v) * inv;
                    g[i.index(ch, y + 1, x)] += s;
                    g[here] -= s;
                }
            }
        }
    }
    i.with_data(g)
}
