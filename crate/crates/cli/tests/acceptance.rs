//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use mdinpaint::dmm::{cosine_sim, MemoryState};
use mdinpaint::harness::{
    check_loss_gradients, gen_corpus, l1_metric, psnr, run_memory_sim, ssim, MemSimConfig,
};
use mdinpaint::losses::{
    inco2_loss, intra_from_latents, perceptual_loss, rec_loss, semantic_loss, style_loss, tv_loss,
    MixPoolExtractor, PooledRegionEncoder,
};
use mdinpaint::mcm::{mcm_enhance, McmConfig};
use mdinpaint::numcore::{fold, unfold, Matrix, Tensor3};
use mdinpaint::semantics::{
    generate_irregular_mask, BinaryMask, LatentMatrix, MaskBand, SemanticMap,
};
use mdinpaint::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vec(r: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn ema_law() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (k, alpha) in [0.0f32, 0.5, 0.9, 0.999].into_iter().enumerate() {
        let (n, m, c) = (2, 4, 4);
        let mut r = rng(100 + k as u64);
        let mut mem = MemoryState::init(n, m, c, alpha, k as u64).unwrap();
        let v = LatentMatrix::from_rows(&[random_vec(&mut r, c), random_vec(&mut r, c)]).unwrap();
        let selected = mem.select_slot_all(&v);
        let dist0: Vec<f64> = (0..n)
            .map(|i| dist(mem.slot(i, selected[i]), v.row(i)))
            .collect();
        for t in 1..=20 {
            let chosen = mem.update(&v, &v).unwrap();
            for i in 0..n {
                assert_eq!(chosen[i], Some(selected[i]), "selection moved");
            }
            if [1, 5, 20].contains(&t) {
                for i in 0..n {
                    let expected = (alpha as f64).powi(t) * dist0[i];
                    let got = dist(mem.slot(i, selected[i]), v.row(i));
                    worst = worst.max((got - expected).abs());
                }
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-5 && within(elapsed, 1.0),
        format!("max deviation {worst:.2e}, {elapsed:.2?}"),
    )
}

trait SelectAll {
    fn select_slot_all(&self, q: &LatentMatrix) -> Vec<usize>;
}

impl SelectAll for MemoryState {
    fn select_slot_all(&self, q: &LatentMatrix) -> Vec<usize> {
        (0..q.n()).map(|i| self.select_slot(i, q.row(i))).collect()
    }
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn disentanglement() -> Verdict {
    let start = Instant::now();
    let (n, m, c) = (14, 128, 8);
    let mut failures = 0;
    for trial in 0..100u64 {
        let mut r = rng(200 + trial);
        let mem = MemoryState::from_slots(n, m, c, 0.999, random_vec(&mut r, n * m * c)).unwrap();
        let rows: Vec<Vec<f32>> = (0..n).map(|_| random_vec(&mut r, c)).collect();
        let q = LatentMatrix::from_rows(&rows).unwrap();
        let block = r.random_range(0..n);
        let before = mem.read(&q).unwrap().q_hat;
        let mut perturbed = mem.clone();
        for i in (0..n).filter(|&i| i != block) {
            for j in 0..m {
                for v in perturbed.slot_mut(i, j) {
                    *v += r.random_range(-0.5..0.5);
                }
            }
        }
        let after = perturbed.read(&q).unwrap().q_hat;
        let same = before
            .row(block)
            .iter()
            .zip(after.row(block))
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        failures == 0 && within(elapsed, 5.0),
        format!("{failures}/100 trials changed the untouched block, {elapsed:.2?}"),
    )
}

fn read_correctness() -> Verdict {
    let (mut worst_sum, mut worst_q) = (0.0f64, 0.0f64);
    for state in 0..1000u64 {
        let mut r = rng(300 + state);
        let (n, m, c) = (
            r.random_range(1..6),
            r.random_range(1..20),
            r.random_range(1..9),
        );
        let mem = MemoryState::from_slots(n, m, c, 0.9, random_vec(&mut r, n * m * c)).unwrap();
        let rows: Vec<Vec<f32>> = (0..n).map(|_| random_vec(&mut r, c)).collect();
        let q = LatentMatrix::from_rows(&rows).unwrap();
        let out = mem.read(&q).unwrap();
        for i in 0..n {
            let s: f64 = out.scores.row(i).iter().map(|&v| v as f64).sum();
            worst_sum = worst_sum.max((s - 1.0).abs());
            let sims: Vec<f64> = (0..m)
                .map(|j| cosine_sim(mem.slot(i, j), &rows[i]))
                .collect();
            let mx = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = sims.iter().map(|s| (s - mx).exp()).sum();
            for ch in 0..c {
                let expected: f64 = (0..m)
                    .map(|j| (sims[j] - mx).exp() / z * mem.slot(i, j)[ch] as f64)
                    .sum();
                worst_q = worst_q.max((expected - out.q_hat.row(i)[ch] as f64).abs());
            }
        }
    }
    verdict(
        worst_sum <= 1e-6 && worst_q <= 1e-5,
        format!("score row sum error {worst_sum:.2e}, q_hat error {worst_q:.2e} over 1000 states"),
    )
}

/// Brute-force masked correlation mining over explicit pixel indices.
fn mcm_oracle(f: &Tensor3, mask: &BinaryMask, cfg: &McmConfig) -> Vec<f64> {
    let (c, h, w) = f.shape();
    let (ps, st) = (cfg.patch_size, cfg.stride);
    let proj = |m: &Matrix, o: usize, y: usize, x: usize| -> f64 {
        (0..c)
            .map(|i| m.get(o, i) as f64 * f.get(i, y, x) as f64)
            .sum()
    };
    let mut origins = vec![];
    let mut oy = 0;
    while oy + ps <= h {
        let mut ox = 0;
        while ox + ps <= w {
            origins.push((oy, ox));
            ox += st;
        }
        oy += st;
    }
    let n = origins.len();
    let mut phi = vec![vec![0.0f64; n]; n];
    for p in 0..n {
        let (py, px) = origins[p];
        for q in 0..n {
            let (qy, qx) = origins[q];
            let mut d = 0.0;
            for ch in 0..c {
                for dy in 0..ps {
                    for dx in 0..ps {
                        d += proj(&cfg.projection_a, ch, py + dy, px + dx)
                            * proj(&cfg.projection_b, ch, qy + dy, qx + dx);
                    }
                }
            }
            phi[p][q] = d;
        }
        if cfg.normalize_scores {
            let mx = phi[p].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = phi[p].iter().map(|v| (v - mx).exp()).sum();
            for v in &mut phi[p] {
                *v = (*v - mx).exp() / z;
            }
        }
    }
    let mut sum = vec![0.0f64; c * h * w];
    let mut cover = vec![0.0f64; h * w];
    for p in 0..n {
        let (py, px) = origins[p];
        for dy in 0..ps {
            for dx in 0..ps {
                cover[(py + dy) * w + px + dx] += 1.0;
                for ch in 0..c {
                    for q in 0..n {
                        let (qy, qx) = origins[q];
                        sum[(ch * h + py + dy) * w + px + dx] +=
                            phi[p][q] * f.get(ch, qy + dy, qx + dx) as f64;
                    }
                }
            }
        }
    }
    let mut out = vec![0.0f64; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let i = (ch * h + y) * w + x;
                out[i] = f.get(ch, y, x) as f64;
                if !mask.is_known(y, x) {
                    out[i] += sum[i] / cover[y * w + x];
                }
            }
        }
    }
    out
}

fn mcm_oracle_equivalence() -> Verdict {
    let mut r = rng(400);
    let (mut geometries, mut worst, mut known_mismatch) = (0usize, 0.0f64, 0usize);
    for patch in 1..=3usize {
        for stride in 1..=patch {
            for h in patch..=6 {
                for w in patch..=6 {
                    if (h - patch) % stride != 0 || (w - patch) % stride != 0 {
                        continue;
                    }
                    for c in 1..=3usize {
                        geometries += 1;
                        for input in 0..50 {
                            let f = Tensor3::new(c, h, w, random_vec(&mut r, c * h * w)).unwrap();
                            let bits = (0..h * w).map(|_| r.random_range(0..2u8)).collect();
                            let mask = BinaryMask::new(h, w, bits).unwrap();
                            let cfg = McmConfig {
                                patch_size: patch,
                                stride,
                                projection_a: Matrix::new(c, c, random_vec(&mut r, c * c)).unwrap(),
                                projection_b: Matrix::new(c, c, random_vec(&mut r, c * c)).unwrap(),
                                normalize_scores: input % 2 == 0,
                            };
                            let got = mcm_enhance(&f, &mask, &cfg).unwrap();
                            let want = mcm_oracle(&f, &mask, &cfg);
                            for (i, (&g, &e)) in got.as_slice().iter().zip(&want).enumerate() {
                                worst = worst.max((g as f64 - e).abs());
                                let (y, x) = ((i / w) % h, i % w);
                                if mask.is_known(y, x) && g.to_bits() != f.as_slice()[i].to_bits() {
                                    known_mismatch += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    verdict(
        worst <= 1e-5 && known_mismatch == 0,
        format!(
            "{geometries} geometries x 50 inputs, max error {worst:.2e}, {known_mismatch} known pixels altered"
        ),
    )
}

fn fold_unfold_identity() -> Verdict {
    let mut r = rng(500);
    let mut worst = 0.0f32;
    for _ in 0..200 {
        let patch = r.random_range(1..=4);
        let stride = r.random_range(1..=patch);
        let h = patch + stride * r.random_range(0..5);
        let w = patch + stride * r.random_range(0..5);
        let c = r.random_range(1..=4);
        let t = Tensor3::new(c, h, w, random_vec(&mut r, c * h * w)).unwrap();
        let back = fold(&unfold(&t, patch, stride).unwrap()).unwrap();
        for (a, b) in t.as_slice().iter().zip(back.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst <= 1e-6, format!("200 cases, max error {worst:.2e}"))
}

fn loss_zero_at_truth() -> Verdict {
    let (h, w, n) = (8, 8, 3);
    let labels = SemanticMap::new(
        h,
        w,
        n,
        (0..h * w).map(|i| ((i % w) * n / w) as u8).collect(),
    )
    .unwrap();
    let mask = BinaryMask::from_fn(h, w, |y, x| y < 4 || x < 3).unwrap();
    let enc = PooledRegionEncoder::new(3, 6, 1).unwrap();
    let fx = MixPoolExtractor::standard(3, 2).unwrap();
    let saturated = Tensor3::from_fn(
        n,
        h,
        w,
        |k, y, x| {
            if labels.label(y, x) == k {
                0.0
            } else {
                -100.0
            }
        },
    )
    .unwrap();
    let textured = Tensor3::from_fn(3, h, w, |c, y, x| {
        0.5 + 0.4 * ((c + 1) as f32 * 0.7 + y as f32 * 0.9 - x as f32 * 0.4).sin()
    })
    .unwrap();
    let constant = Tensor3::filled(3, h, w, 0.37).unwrap();

    let mut worst = 0.0f64;
    let mut terms = Vec::new();
    for (name, img) in [("textured", &textured), ("constant", &constant)] {
        let mut values = vec![
            ("inco2", inco2_loss(img, img, &mask, &labels, &enc).unwrap()),
            ("semantic", semantic_loss(&saturated, &labels).unwrap()),
            ("rec", rec_loss(img, img).unwrap()),
            ("perc", perceptual_loss(img, img, &fx).unwrap()),
            ("style", style_loss(img, img, &fx).unwrap()),
        ];
        // TV depends on one image only; it vanishes at the truth exactly
        // when the truth is flat.
        if name == "constant" {
            values.push(("tv", tv_loss(img)));
        } else {
            terms.push(format!("tv(textured)={:.3}", tv_loss(img)));
        }
        for (_, v) in &values {
            worst = worst.max(*v);
        }
    }
    let mut ce_err = 0.0f64;
    for classes in [2usize, 5, 14] {
        let labels = SemanticMap::new(
            4,
            4,
            classes,
            (0..16).map(|i| (i % classes) as u8).collect(),
        )
        .unwrap();
        let uniform = Tensor3::filled(classes, 4, 4, 0.3).unwrap();
        ce_err =
            ce_err.max((semantic_loss(&uniform, &labels).unwrap() - (classes as f64).ln()).abs());
    }
    verdict(
        worst < 1e-6 && ce_err <= 1e-6,
        format!(
            "max loss at truth {worst:.2e}, uniform-logit ln(n) error {ce_err:.2e}; {}",
            terms.join(" ")
        ),
    )
}

fn gradient_checks() -> Verdict {
    let start = Instant::now();
    let records = check_loss_gradients(100, (2, 5, 5), 700).unwrap();
    let worst = |loss: &str| {
        records
            .iter()
            .filter(|r| r.loss == loss)
            .map(|r| r.max_rel_error)
            .fold(0.0, f64::max)
    };
    let (rec, tv) = (worst("rec"), worst("tv"));
    let elapsed = start.elapsed();
    verdict(
        rec < 1e-4 && tv < 1e-4 && within(elapsed, 10.0),
        format!("rec {rec:.2e}, tv {tv:.2e} over 100 points each, {elapsed:.2?}"),
    )
}

fn inco2_hand_case() -> Verdict {
    let m_hat = Matrix::identity(2).unwrap();
    let m_gt = Matrix::from_rows(&[[1.0f32, 0.0], [1.0, 0.0]]).unwrap();
    let got = intra_from_latents(&m_hat, &m_gt).unwrap();
    verdict(got == 0.75, format!("mean |delta| = {got}, expected 3/4"))
}

fn memory_dynamics() -> Verdict {
    let corpus = gen_corpus(32, 48, 48, 4, 7).unwrap();
    let cfg = MemSimConfig {
        slots: 16,
        alpha: 0.99,
        steps: 200,
        seed: 7,
        ..MemSimConfig::default()
    };
    let mcm = McmConfig::identity(3).unwrap();
    let (a, mem_a) = run_memory_sim(&corpus, &cfg, &mcm).unwrap();
    let (b, mem_b) = run_memory_sim(&corpus, &cfg, &mcm).unwrap();
    let (first, last) = (a.initial_error().unwrap(), a.final_error().unwrap());
    let identical = a.to_jsonl() == b.to_jsonl() && mem_a.to_bytes() == mem_b.to_bytes();
    let runtime = a.runtime.max(b.runtime);
    verdict(
        last < 0.5 * first && identical && within(runtime, 30.0),
        format!(
            "error {first:.4} -> {last:.4} (ratio {:.3}, need < 0.5), byte-identical {identical}, {runtime:.2?}",
            last / first
        ),
    )
}

fn metric_sanity() -> Verdict {
    let x = Tensor3::from_fn(3, 16, 16, |c, y, x| {
        ((c * 7 + y * 3 + x) % 13) as f32 / 12.0
    })
    .unwrap();
    let zeros = Tensor3::zeros(3, 16, 16).unwrap();
    let tenth = Tensor3::filled(3, 16, 16, 0.1).unwrap();
    let (p, s, l) = (
        psnr(&x, &x).unwrap(),
        ssim(&x, &x).unwrap(),
        l1_metric(&x, &x).unwrap(),
    );
    let p20 = psnr(&zeros, &tenth).unwrap();
    verdict(
        p == 100.0 && (s - 1.0).abs() < 1e-12 && l == 0.0 && (p20 - 20.0).abs() <= 1e-6,
        format!("psnr(x,x)={p} ssim(x,x)={s} l1(x,x)={l} psnr(mse=0.01)={p20:.9}"),
    )
}

fn run_cli(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_mdinpaint"))
        .args(args)
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap_or(-1)
}

fn format_round_trips() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let mut r = rng(1100);
    let mut mem = MemoryState::init(3, 5, 4, 0.99, 3).unwrap();
    let rows: Vec<Vec<f32>> = (0..3).map(|_| random_vec(&mut r, 4)).collect();
    let v = LatentMatrix::from_rows(&rows).unwrap();
    mem.update(&v, &v).unwrap();
    mem.save(p("m.mdm")).unwrap();
    let mem_ok = MemoryState::load(p("m.mdm")).unwrap().to_bytes() == mem.to_bytes();
    let t = Tensor3::new(3, 4, 5, random_vec(&mut r, 60)).unwrap();
    t.save(p("t.mdt")).unwrap();
    let back = Tensor3::load(p("t.mdt")).unwrap();
    let t_ok = back
        .as_slice()
        .iter()
        .zip(t.as_slice())
        .all(|(a, b)| a.to_bits() == b.to_bits())
        && back.shape() == t.shape();
    let mtx = Matrix::new(2, 3, random_vec(&mut r, 6)).unwrap();
    mtx.save(p("w.mdt")).unwrap();
    let m_ok = Matrix::load(p("w.mdt")).unwrap() == mtx;

    let mem_bytes = std::fs::read(p("m.mdm")).unwrap();
    let t_bytes = std::fs::read(p("t.mdt")).unwrap();
    let mut bad_magic = t_bytes.clone();
    bad_magic[0] = b'X';
    let mut bad_mem_magic = mem_bytes.clone();
    bad_mem_magic[3] = b'0';
    std::fs::write(p("trunc.mdt"), &t_bytes[..t_bytes.len() - 3]).unwrap();
    std::fs::write(p("magic.mdt"), &bad_magic).unwrap();
    std::fs::write(p("trunc.mdm"), &mem_bytes[..21]).unwrap();
    std::fs::write(p("magic.mdm"), &bad_mem_magic).unwrap();
    let lib_errors = [
        Tensor3::load(p("trunc.mdt")).err(),
        Tensor3::load(p("magic.mdt")).err(),
        MemoryState::load(p("trunc.mdm")).err(),
        MemoryState::load(p("magic.mdm")).err(),
    ]
    .into_iter()
    .all(|e| matches!(e, Some(Error::Format { .. })));

    // Reference inputs for the losses subcommand.
    Tensor3::filled(3, 4, 4, 0.5)
        .unwrap()
        .save(p("ok.mdt"))
        .unwrap();
    BinaryMask::all_known(4, 4)
        .unwrap()
        .save_pgm(p("mask.pgm"))
        .unwrap();
    SemanticMap::uniform(4, 4)
        .unwrap()
        .save_pgm(p("labels.pgm"))
        .unwrap();
    let mut codes = Vec::new();
    for bad in ["trunc.mdt", "magic.mdt"] {
        let cfg = p(&format!("{bad}.cfg"));
        std::fs::write(
            &cfg,
            format!(
                "prediction={}\nreference={}\nmask={}\nlabels={}\nclasses=2\n",
                p(bad).display(),
                p("ok.mdt").display(),
                p("mask.pgm").display(),
                p("labels.pgm").display()
            ),
        )
        .unwrap();
        codes.push(run_cli(&[
            "losses",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ]));
    }
    for bad in ["trunc.mdm", "magic.mdm"] {
        let cfg = p(&format!("{bad}.cfg"));
        std::fs::write(
            &cfg,
            format!(
                "count=2\nheight=12\nwidth=12\nmemory={}\n",
                p(bad).display()
            ),
        )
        .unwrap();
        codes.push(run_cli(&[
            "pipeline",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ]));
    }
    let codes_ok = codes.iter().all(|&c| c == 3);
    verdict(
        mem_ok && t_ok && m_ok && lib_errors && codes_ok,
        format!(
            "MDM1 {mem_ok}, MDT1 tensor {t_ok}, MDT1 matrix {m_ok}, format errors {lib_errors}, CLI exit codes {codes:?}"
        ),
    )
}

fn mask_bands() -> Verdict {
    let mut misses = Vec::new();
    let mut attempts = 0;
    for (h, w) in [(64, 64), (256, 256)] {
        for band in MaskBand::ALL {
            for seed in 0..50u64 {
                attempts += 1;
                match generate_irregular_mask(h, w, band.center(), seed) {
                    Ok(m) if band.contains(m.corrupted_fraction()) => {}
                    _ => misses.push(format!("{h}x{w}/{}/{seed}", band.label())),
                }
            }
        }
    }
    verdict(
        misses.is_empty(),
        format!(
            "{attempts} masks, {} band misses {:?}",
            misses.len(),
            misses
        ),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("memory EMA law", ema_law),
        ("disentanglement", disentanglement),
        ("read correctness", read_correctness),
        ("MCM oracle equivalence", mcm_oracle_equivalence),
        ("fold/unfold identity", fold_unfold_identity),
        ("loss zero-at-truth", loss_zero_at_truth),
        ("gradient checks", gradient_checks),
        ("InCo2 hand case", inco2_hand_case),
        ("memory-dynamics regression", memory_dynamics),
        ("metric sanity", metric_sanity),
        ("format round-trips", format_round_trips),
        ("mask bands", mask_bands),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {tag}  {name}: {}", i + 1, v.detail);
        if !v.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
