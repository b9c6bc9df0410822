use serde::Serialize;

use super::terms::adv_from_critic;
use super::{
    inco2_loss, perceptual_loss, rec_loss, semantic_loss, style_loss, tv_loss, Critic,
    FeatureExtractor, RegionEncoder,
};
use crate::config::KvConfig;
use crate::error::ensure;
use crate::numcore::Tensor3;
use crate::semantics::{BinaryMask, SemanticMap};
use crate::Result;

/// Weights of the seven objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub inco2: f64,
    pub semantic: f64,
    pub rec: f64,
    pub perc: f64,
    pub style: f64,
    pub adv: f64,
    pub tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            inco2: 1.0,
            semantic: 1.0,
            rec: 1.0,
            perc: 0.1,
            style: 250.0,
            adv: 0.1,
            tv: 0.1,
        }
    }
}

impl LossWeights {
    pub const KEYS: [&'static str; 7] = [
        "lambda1", "lambda2", "lambda3", "lambda4", "lambda5", "lambda6", "lambda7",
    ];

    pub fn zero() -> Self {
        Self::from_array([0.0; 7]).expect("zero weights are valid")
    }

    pub fn from_array(w: [f64; 7]) -> Result<Self> {
        for (k, v) in Self::KEYS.iter().zip(w) {
            ensure!(
                v.is_finite() && v >= 0.0,
                "{k} = {v} must be a nonnegative number"
            );
        }
        let [inco2, semantic, rec, perc, style, adv, tv] = w;
        Ok(Self {
            inco2,
            semantic,
            rec,
            perc,
            style,
            adv,
            tv,
        })
    }

    pub fn as_array(&self) -> [f64; 7] {
        [
            self.inco2,
            self.semantic,
            self.rec,
            self.perc,
            self.style,
            self.adv,
            self.tv,
        ]
    }

    /// Reads `lambda1..lambda7` from `cfg`, keeping defaults for missing keys.
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let mut w = Self::default().as_array();
        for (slot, key) in w.iter_mut().zip(Self::KEYS) {
            if let Some(v) = cfg.get::<f64>(key)? {
                *slot = v;
            }
        }
        Self::from_array(w)
    }

    /// Parses a standalone weights file; only `lambda1..lambda7` are allowed.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = KvConfig::parse(text)?;
        cfg.reject_unknown(&Self::KEYS)?;
        Self::from_config(&cfg)
    }
}

/// Every term plus the weighted total. Field order is the JSON key order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub inco2: f64,
    pub semantic: f64,
    pub rec: f64,
    pub perc: f64,
    pub style: f64,
    pub adv: f64,
    pub tv: f64,
    pub total: f64,
}

impl LossReport {
    pub fn terms(&self) -> [f64; 7] {
        [
            self.inco2,
            self.semantic,
            self.rec,
            self.perc,
            self.style,
            self.adv,
            self.tv,
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numeric struct")
    }

    pub fn is_finite(&self) -> bool {
        self.terms().iter().all(|v| v.is_finite()) && self.total.is_finite()
    }
}

/// Images and parser outputs for one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub i_hat: &'a Tensor3,
    pub i_gt: &'a Tensor3,
    pub mask: &'a BinaryMask,
    /// Semantic regions for the coordination losses.
    pub regions: &'a SemanticMap,
    /// Parser logits for the completed image.
    pub logits_hat: &'a Tensor3,
    /// Parser labels for the ground truth.
    pub labels_gt: &'a SemanticMap,
}

/// Stand-ins for the pretrained networks.
#[derive(Clone, Copy)]
pub struct LossModels<'a> {
    pub encoder: &'a dyn RegionEncoder,
    pub extractor: &'a dyn FeatureExtractor,
    pub critic: &'a dyn Critic,
}

/// Evaluates each term once. Terms whose weight is zero are skipped and
/// reported as 0. The adversarial entry is the generator-side loss.
pub fn total_loss(inputs: &LossInputs, models: &LossModels, w: &LossWeights) -> Result<LossReport> {
    let LossInputs {
        i_hat,
        i_gt,
        mask,
        regions,
        logits_hat,
        labels_gt,
    } = *inputs;
    ensure!(i_hat.same_shape(i_gt), "image shapes differ");
    let when = |weight: f64, f: &dyn Fn() -> Result<f64>| -> Result<f64> {
        if weight == 0.0 {
            Ok(0.0)
        } else {
            f()
        }
    };
    let inco2 = when(w.inco2, &|| {
        inco2_loss(i_hat, i_gt, mask, regions, models.encoder)
    })?;
    let semantic = when(w.semantic, &|| semantic_loss(logits_hat, labels_gt))?;
    let rec = when(w.rec, &|| rec_loss(i_hat, i_gt))?;
    let perc = when(w.perc, &|| perceptual_loss(i_hat, i_gt, models.extractor))?;
    let style = when(w.style, &|| style_loss(i_hat, i_gt, models.extractor))?;
    let adv = when(w.adv, &|| {
        Ok(adv_from_critic(i_hat, i_gt, models.critic)?.generator)
    })?;
    let tv = when(w.tv, &|| Ok(tv_loss(i_hat)))?;
    let terms = [inco2, semantic, rec, perc, style, adv, tv];
    let total = terms.iter().zip(w.as_array()).map(|(t, l)| t * l).sum();
    Ok(LossReport {
        inco2,
        semantic,
        rec,
        perc,
        style,
        adv,
        tv,
        total,
    })
}
