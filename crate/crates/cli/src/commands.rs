//! One function per subcommand. Each validates its config keys, runs, and
//! writes its artefacts under the output directory.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use mdinpaint::config::KvConfig;
use mdinpaint::dmm::MemoryState;
use mdinpaint::harness::{
    check_loss_gradients, run_memory_sim, run_pipeline, CorpusConfig, MemSimConfig, PipelineModels,
    PrototypeParser, SyntheticSample,
};
use mdinpaint::losses::{total_loss, LossInputs, LossModels, LossWeights};
use mdinpaint::mcm::McmConfig;
use mdinpaint::numcore::Tensor3;
use mdinpaint::semantics::{generate_irregular_mask, pnm, BinaryMask, MaskBand, SemanticMap};
use serde_json::json;

pub type Handler = fn(&KvConfig, u64, &Path) -> anyhow::Result<()>;

const CORPUS_KEYS: [&str; 5] = ["count", "height", "width", "classes", "styles"];
const MCM_KEYS: [&str; 5] = [
    "patch",
    "stride",
    "normalize",
    "projection_a",
    "projection_b",
];
const GRAD_TOLERANCE: f64 = 1e-4;

fn allow(cfg: &KvConfig, groups: &[&[&str]]) -> mdinpaint::Result<()> {
    let keys: Vec<&str> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    cfg.reject_unknown(&keys)
}

fn corpus_config(cfg: &KvConfig, seed: u64) -> mdinpaint::Result<CorpusConfig> {
    let d = CorpusConfig::default();
    Ok(CorpusConfig {
        count: cfg.get_or("count", d.count)?,
        height: cfg.get_or("height", d.height)?,
        width: cfg.get_or("width", d.width)?,
        classes: cfg.get_or("classes", d.classes)?,
        styles_per_class: cfg.get_or("styles", d.styles_per_class)?,
        seed,
    })
}

fn mcm_config(cfg: &KvConfig) -> mdinpaint::Result<McmConfig> {
    let d = McmConfig::identity(3)?;
    let mut m = d
        .clone()
        .with_geometry(
            cfg.get_or("patch", d.patch_size)?,
            cfg.get_or("stride", d.stride)?,
        )
        .with_normalization(cfg.get_or("normalize", d.normalize_scores)?);
    match (cfg.get_str("projection_a"), cfg.get_str("projection_b")) {
        (Some(a), Some(b)) => m = m.with_projection_files(a, b)?,
        (None, None) => {}
        _ => {
            return Err(mdinpaint::Error::contract(
                "projection_a and projection_b must be given together",
            ))
        }
    }
    Ok(m)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn band_label(s: &SyntheticSample) -> &'static str {
    s.band().map_or("none", MaskBand::label)
}

pub fn gen_corpus(cfg: &KvConfig, seed: u64, out: &Path) -> anyhow::Result<()> {
    allow(cfg, &[&CORPUS_KEYS])?;
    let corpus = corpus_config(cfg, seed)?.generate()?;
    let mut rows = Vec::with_capacity(corpus.len());
    for (i, s) in corpus.iter().enumerate() {
        let stem = format!("sample_{i:03}");
        pnm::write_ppm(out.join(format!("{stem}.ppm")), &s.image)?;
        s.image.save(out.join(format!("{stem}.mdt")))?;
        s.semantic
            .save_pgm(out.join(format!("{stem}_labels.pgm")))?;
        s.mask.save_pgm(out.join(format!("{stem}_mask.pgm")))?;
        rows.push(json!({
            "sample": i,
            "seed": s.seed,
            "corrupted_fraction": s.mask.corrupted_fraction(),
            "band": band_label(s),
        }));
    }
    write_jsonl(&out.join("corpus.jsonl"), &rows)?;
    println!("wrote {} samples to {}", corpus.len(), out.display());
    Ok(())
}

pub fn mem_sim(cfg: &KvConfig, seed: u64, out: &Path) -> anyhow::Result<()> {
    allow(cfg, &[&CORPUS_KEYS, &MemSimConfig::KEYS, &MCM_KEYS])?;
    let corpus = corpus_config(cfg, seed)?.generate()?;
    let sim = MemSimConfig::from_config(cfg, seed)?;
    let (report, mem) = run_memory_sim(&corpus, &sim, &mcm_config(cfg)?)?;
    fs::write(out.join("sim.jsonl"), report.to_jsonl())?;
    mem.save(out.join("memory.mdm"))?;
    if let (Some(first), Some(last)) = (report.initial_error(), report.final_error()) {
        println!(
            "{} steps: retrieval error {first:.6} -> {last:.6} ({:.3}x) in {:.2?}",
            report.steps.len(),
            last / first,
            report.runtime
        );
    }
    Ok(())
}

pub fn pipeline(cfg: &KvConfig, seed: u64, out: &Path) -> anyhow::Result<()> {
    allow(
        cfg,
        &[
            &CORPUS_KEYS,
            &MemSimConfig::KEYS,
            &MCM_KEYS,
            &LossWeights::KEYS,
            &["memory"],
        ],
    )?;
    let corpus = corpus_config(cfg, seed)?.generate()?;
    let mcm = mcm_config(cfg)?;
    let mem = match cfg.get_str("memory") {
        Some(path) => MemoryState::load(path)?,
        None => run_memory_sim(&corpus, &MemSimConfig::from_config(cfg, seed)?, &mcm)?.1,
    };
    let weights = LossWeights::from_config(cfg)?;
    let models = PipelineModels::reference(PrototypeParser::fit(&corpus)?, seed)?;
    let mut rows = Vec::with_capacity(corpus.len());
    for (i, s) in corpus.iter().enumerate() {
        let r = run_pipeline(s, &s.image, &mem, &mcm, &weights, &models)?;
        pnm::write_ppm(out.join(format!("recon_{i:03}.ppm")), &r.image)?;
        r.features.save(out.join(format!("features_{i:03}.mdt")))?;
        rows.push(json!({
            "sample": i,
            "band": band_label(s),
            "losses": r.losses,
            "metrics": r.metrics,
        }));
    }
    write_jsonl(&out.join("pipeline.jsonl"), &rows)?;
    println!("ran {} samples", corpus.len());
    Ok(())
}

pub fn losses(cfg: &KvConfig, _seed: u64, out: &Path) -> anyhow::Result<()> {
    const KEYS: [&str; 5] = ["prediction", "reference", "mask", "labels", "classes"];
    allow(cfg, &[&KEYS, &LossWeights::KEYS])?;
    let path = |k: &str| {
        cfg.get_str(k)
            .ok_or_else(|| mdinpaint::Error::contract(format!("config key {k} is required")))
    };
    let i_hat = Tensor3::load(path("prediction")?)?;
    let i_gt = Tensor3::load(path("reference")?)?;
    let mask = BinaryMask::load_pgm(path("mask")?)?;
    let classes: usize = cfg
        .get("classes")?
        .ok_or_else(|| mdinpaint::Error::contract("config key classes is required"))?;
    let labels = SemanticMap::load_pgm(path("labels")?, classes)?;
    let reference = SyntheticSample {
        image: i_gt.clone(),
        semantic: labels.clone(),
        mask: mask.clone(),
        seed: 0,
    };
    let models = PipelineModels::reference(PrototypeParser::fit(&[reference])?, 0)?;
    let logits_hat = models.parser.logits(&i_hat)?;
    let report = total_loss(
        &LossInputs {
            i_hat: &i_hat,
            i_gt: &i_gt,
            mask: &mask,
            regions: &labels,
            logits_hat: &logits_hat,
            labels_gt: &labels,
        },
        &LossModels {
            encoder: models.encoder.as_ref(),
            extractor: models.extractor.as_ref(),
            critic: models.critic.as_ref(),
        },
        &LossWeights::from_config(cfg)?,
    )?;
    fs::write(out.join("losses.jsonl"), report.to_json() + "\n")?;
    println!("{}", report.to_json());
    Ok(())
}

pub fn mask_gen(cfg: &KvConfig, seed: u64, out: &Path) -> anyhow::Result<()> {
    allow(cfg, &[&["height", "width", "count", "band", "coverage"]])?;
    let h: usize = cfg.get_or("height", 64)?;
    let w: usize = cfg.get_or("width", 64)?;
    let count: usize = cfg.get_or("count", 1)?;
    let coverage = match (cfg.get::<f64>("coverage")?, cfg.get_str("band")) {
        (Some(c), None) => c,
        (None, Some(b)) => MaskBand::ALL
            .into_iter()
            .find(|x| x.label() == b)
            .ok_or_else(|| mdinpaint::Error::contract(format!("unknown band {b:?}")))?
            .center(),
        (None, None) => MaskBand::Medium.center(),
        (Some(_), Some(_)) => {
            return Err(mdinpaint::Error::contract("give either coverage or band, not both").into())
        }
    };
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let mask_seed = seed.wrapping_add(i as u64);
        let m = generate_irregular_mask(h, w, coverage, mask_seed)?;
        m.save_pgm(out.join(format!("mask_{i:03}.pgm")))?;
        let frac = m.corrupted_fraction();
        rows.push(json!({
            "mask": i,
            "seed": mask_seed,
            "corrupted_fraction": frac,
            "band": MaskBand::of_fraction(frac).map_or("none", MaskBand::label),
        }));
    }
    write_jsonl(&out.join("masks.jsonl"), &rows)?;
    println!("wrote {count} masks");
    Ok(())
}

pub fn grad_check(cfg: &KvConfig, seed: u64, out: &Path) -> anyhow::Result<()> {
    allow(cfg, &[&["points", "channels", "height", "width"]])?;
    let shape = (
        cfg.get_or("channels", 2)?,
        cfg.get_or("height", 5)?,
        cfg.get_or("width", 5)?,
    );
    let records = check_loss_gradients(cfg.get_or("points", 100)?, shape, seed)?;
    write_jsonl(&out.join("gradcheck.jsonl"), &records)?;
    let worst = records.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    println!("{} checks, worst relative error {worst:.3e}", records.len());
    if worst >= GRAD_TOLERANCE {
        bail!("gradient check exceeded tolerance {GRAD_TOLERANCE:e}");
    }
    Ok(())
}
