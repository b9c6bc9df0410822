//! Per-semantic slot memory.
//!
//! The memory holds `n` independent blocks of `m` slots each. Block `i` is
//! only ever touched by row `i` of a query or value matrix, so retrieval for
//! one semantic category cannot be influenced by another category's slots.
//!
//! Writes select the slot with the highest cosine similarity to the query
//! and move it toward the observed value by an exponential moving average.
//! Reads weight every slot of the block by the softmax of its cosine
//! similarity to the query.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ensure;
use crate::numcore::binfmt::Reader;
use crate::numcore::matrix::softmax_f64;
use crate::numcore::Matrix;
use crate::semantics::LatentMatrix;
use crate::{Error, Result};

/// Slots per block when not configured otherwise.
pub const DEFAULT_SLOTS: usize = 128;
/// Decay rate when not configured otherwise.
pub const DEFAULT_ALPHA: f32 = 0.999;

const MAGIC: &[u8; 4] = b"MDM1";
const INIT_RANGE: f32 = 0.05;
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    n: usize,
    m: usize,
    c: usize,
    alpha: f32,
    slots: Vec<f32>,
    initialized: Vec<bool>,
}

/// Output of [`MemoryState::read`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReadResult {
    /// Memory-based latent per category; every row is valid.
    pub q_hat: LatentMatrix,
    /// `n × m` soft scores.
    pub scores: Matrix,
    /// Highest-scoring slot per category.
    pub best_slot: Vec<usize>,
}

/// Cosine similarity in `f64`. Returns 0 when either vector has norm below
/// `1e-12`.
pub fn cosine_sim(e: &[f32], q: &[f32]) -> f64 {
    debug_assert_eq!(e.len(), q.len());
    let (mut dot, mut ee, mut qq) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in e.iter().zip(q) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        ee += a * a;
        qq += b * b;
    }
    let (ne, nq) = (ee.sqrt(), qq.sqrt());
    if ne < NORM_FLOOR || nq < NORM_FLOOR {
        0.0
    } else {
        dot / (ne * nq)
    }
}

impl MemoryState {
    /// Slots drawn i.i.d. from `U[-0.05, 0.05]`, all flagged uninitialised.
    pub fn init(n: usize, m: usize, c: usize, alpha: f32, seed: u64) -> Result<Self> {
        ensure!(
            n > 0 && m > 0 && c > 0,
            "memory dimensions must be positive"
        );
        ensure!(
            (0.0..=1.0).contains(&alpha),
            "decay rate {alpha} outside [0, 1]"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = (0..n * m * c)
            .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
            .collect();
        Ok(Self {
            n,
            m,
            c,
            alpha,
            slots,
            initialized: vec![false; n * m],
        })
    }

    /// Builds a state from explicit slot values, laid out `(block, slot, channel)`.
    pub fn from_slots(n: usize, m: usize, c: usize, alpha: f32, slots: Vec<f32>) -> Result<Self> {
        ensure!(
            n > 0 && m > 0 && c > 0,
            "memory dimensions must be positive"
        );
        ensure!(
            (0.0..=1.0).contains(&alpha),
            "decay rate {alpha} outside [0, 1]"
        );
        ensure!(
            slots.len() == n * m * c,
            "slot data length {} != {n}x{m}x{c}",
            slots.len()
        );
        ensure!(
            slots.iter().all(|v| v.is_finite()),
            "slot values must be finite"
        );
        Ok(Self {
            n,
            m,
            c,
            alpha,
            slots,
            initialized: vec![false; n * m],
        })
    }

    pub fn blocks(&self) -> usize {
        self.n
    }

    pub fn slots_per_block(&self) -> usize {
        self.m
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn slot(&self, block: usize, j: usize) -> &[f32] {
        let start = (block * self.m + j) * self.c;
        &self.slots[start..start + self.c]
    }

    pub fn slot_mut(&mut self, block: usize, j: usize) -> &mut [f32] {
        let start = (block * self.m + j) * self.c;
        &mut self.slots[start..start + self.c]
    }

    pub fn is_initialized(&self, block: usize, j: usize) -> bool {
        self.initialized[block * self.m + j]
    }

    pub fn raw_slots(&self) -> &[f32] {
        &self.slots
    }

    fn check_latents(&self, name: &str, q: &LatentMatrix) -> Result<()> {
        ensure!(
            q.n() == self.n && q.c() == self.c,
            "{name} is {}x{}, memory expects {}x{}",
            q.n(),
            q.c(),
            self.n,
            self.c
        );
        Ok(())
    }

    /// Index of the slot in `block` most similar to `query`; ties go to the
    /// lowest index.
    pub fn select_slot(&self, block: usize, query: &[f32]) -> usize {
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for j in 0..self.m {
            let sim = cosine_sim(self.slot(block, j), query);
            if sim > best_sim {
                best = j;
                best_sim = sim;
            }
        }
        best
    }

    /// One EMA write per category. For each `i` where both `q[i]` and
    /// `v[i]` are valid, the slot most similar to `q[i]` becomes
    /// `α·e + (1 − α)·v[i]`. Returns the written slot per block.
    pub fn update(&mut self, q: &LatentMatrix, v: &LatentMatrix) -> Result<Vec<Option<usize>>> {
        self.check_latents("query", q)?;
        self.check_latents("value", v)?;
        let alpha = self.alpha as f64;
        let mut written = vec![None; self.n];
        for (i, slot) in written.iter_mut().enumerate() {
            if !(q.is_valid(i) && v.is_valid(i)) {
                continue;
            }
            let k = self.select_slot(i, q.row(i));
            let value = v.row(i);
            for (e, &x) in self.slot_mut(i, k).iter_mut().zip(value) {
                *e = (alpha * *e as f64 + (1.0 - alpha) * x as f64) as f32;
            }
            self.initialized[i * self.m + k] = true;
            *slot = Some(k);
        }
        Ok(written)
    }

    /// Soft-score read. Invalid query rows use uniform scores, which reads
    /// out the block mean.
    pub fn read(&self, q: &LatentMatrix) -> Result<ReadResult> {
        self.check_latents("query", q)?;
        let (n, m, c) = (self.n, self.m, self.c);
        let mut q_hat = vec![0.0f32; n * c];
        let mut scores = Vec::with_capacity(n * m);
        let mut best_slot = Vec::with_capacity(n);
        for i in 0..n {
            let weights: Vec<f64> = if q.is_valid(i) {
                let sims: Vec<f64> = (0..m)
                    .map(|j| cosine_sim(self.slot(i, j), q.row(i)))
                    .collect();
                softmax_f64(&sims)
            } else {
                vec![1.0 / m as f64; m]
            };
            let mut acc = vec![0.0f64; c];
            for (j, &a) in weights.iter().enumerate() {
                for (s, &e) in acc.iter_mut().zip(self.slot(i, j)) {
                    *s += a * e as f64;
                }
            }
            for (dst, s) in q_hat[i * c..(i + 1) * c].iter_mut().zip(acc) {
                *dst = s as f32;
            }
            let mut best = 0;
            for (j, &a) in weights.iter().enumerate() {
                if a > weights[best] {
                    best = j;
                }
            }
            best_slot.push(best);
            scores.extend(weights.iter().map(|&a| a as f32));
        }
        Ok(ReadResult {
            q_hat: LatentMatrix::new(n, c, q_hat, vec![true; n])?,
            scores: Matrix::new(n, m, scores)?,
            best_slot,
        })
    }

    /// `MDM1` encoding: magic, `n, m, c` as little-endian `u32`, `alpha` as
    /// `f32`, `n·m` initialised-flag bytes, then the slots as `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.initialized.len() + 4 * self.slots.len());
        out.extend_from_slice(MAGIC);
        for d in [self.n, self.m, self.c] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend(self.initialized.iter().map(|&b| b as u8));
        for v in &self.slots {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let (n, m, c) = (r.dim()?, r.dim()?, r.dim()?);
        let alpha = r.f32()?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::format(
                16,
                format!("decay rate {alpha} outside [0, 1]"),
            ));
        }
        let blocks = n
            .checked_mul(m)
            .ok_or_else(|| Error::format(4, "memory size overflows"))?;
        let flags_at = 20;
        let flags = r.take(blocks)?;
        if let Some(p) = flags.iter().position(|&b| b > 1) {
            return Err(Error::format(
                flags_at + p,
                "initialised flag is not 0 or 1",
            ));
        }
        let initialized = flags.iter().map(|&b| b == 1).collect();
        let count = blocks
            .checked_mul(c)
            .ok_or_else(|| Error::format(4, "memory size overflows"))?;
        let slots = r.f32s(count)?;
        r.finish()?;
        Ok(Self {
            n,
            m,
            c,
            alpha,
            slots,
            initialized,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn latents(rows: &[&[f32]]) -> LatentMatrix {
        LatentMatrix::from_rows(rows).unwrap()
    }

    fn norm_diff(a: &[f32], b: &[f32]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = MemoryState::init(2, 3, 4, 0.9, 5).unwrap();
        assert_eq!(a, MemoryState::init(2, 3, 4, 0.9, 5).unwrap());
        assert_ne!(a, MemoryState::init(2, 3, 4, 0.9, 6).unwrap());
        assert_eq!(a.raw_slots().len(), 24);
        assert!(a.raw_slots().iter().all(|v| (-0.05..=0.05).contains(v)));
        assert!(matches!(
            MemoryState::init(1, 1, 1, 1.5, 0),
            Err(Error::Contract(_))
        ));
        assert!(MemoryState::init(1, 1, 1, -0.1, 0).is_err());
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_sim(&[1., 0.], &[1., 0.]), 1.0);
        assert_eq!(cosine_sim(&[1., 0.], &[0., 1.]), 0.0);
        assert!((cosine_sim(&[3., 4.], &[6., 8.]) - 1.0).abs() < 1e-12);
        assert!((cosine_sim(&[1., 1.], &[1., 0.]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine_sim(&[0., 0.], &[1., 0.]), 0.0);
    }

    #[test]
    fn alpha_one_freezes_memory() {
        let mut mem = MemoryState::init(2, 4, 3, 1.0, 1).unwrap();
        let before = mem.clone();
        let q = latents(&[&[1., 2., 3.], &[-1., 0., 1.]]);
        mem.update(&q, &q).unwrap();
        assert_eq!(mem.raw_slots(), before.raw_slots());
    }

    #[test]
    fn alpha_zero_copies_value() {
        let mut mem = MemoryState::init(1, 4, 2, 0.0, 2).unwrap();
        let q = latents(&[&[1., 0.]]);
        let v = latents(&[&[0.3, -0.7]]);
        let k = mem.update(&q, &v).unwrap()[0].unwrap();
        assert_eq!(mem.slot(0, k), &[0.3, -0.7]);
        assert!(mem.is_initialized(0, k));
    }

    #[test]
    fn zero_slot_ema_arithmetic() {
        let mut mem = MemoryState::from_slots(1, 1, 2, 0.9, vec![0.0, 0.0]).unwrap();
        let v = latents(&[&[1., 1.]]);
        mem.update(&v, &v).unwrap();
        for &e in mem.slot(0, 0) {
            assert!((e - 0.1).abs() < 1e-7);
        }
    }

    #[test]
    fn geometric_convergence() {
        let mut mem = MemoryState::from_slots(1, 1, 3, 0.9, vec![0.5, -0.2, 0.1]).unwrap();
        let v = latents(&[&[1.0, 2.0, -1.0]]);
        let d0 = norm_diff(mem.slot(0, 0), v.row(0));
        for t in 1..=20 {
            mem.update(&v, &v).unwrap();
            let expect = 0.9f64.powi(t) * d0;
            assert!((norm_diff(mem.slot(0, 0), v.row(0)) - expect).abs() < 1e-5);
        }
    }

    #[test]
    fn invalid_rows_leave_blocks_untouched() {
        let mut mem = MemoryState::init(2, 3, 2, 0.5, 3).unwrap();
        let before = mem.clone();
        let q = LatentMatrix::new(2, 2, vec![1., 1., 0., 0.], vec![true, false]).unwrap();
        let v = LatentMatrix::new(2, 2, vec![0., 0., 1., 1.], vec![false, true]).unwrap();
        assert_eq!(mem.update(&q, &v).unwrap(), vec![None, None]);
        assert_eq!(mem, before);
    }

    #[test]
    fn update_rejects_shape_mismatch() {
        let mut mem = MemoryState::init(2, 3, 2, 0.5, 3).unwrap();
        let q = latents(&[&[1., 1., 1.], &[0., 1., 1.]]);
        assert!(matches!(mem.update(&q, &q), Err(Error::Contract(_))));
        assert!(mem.read(&q).is_err());
    }

    #[test]
    fn read_two_slot_hand_case() {
        let mem = MemoryState::from_slots(1, 2, 2, 0.9, vec![1., 0., 0., 1.]).unwrap();
        let r = mem.read(&latents(&[&[1., 0.]])).unwrap();
        assert!((r.scores.get(0, 0) - 0.7311).abs() < 1e-4);
        assert!((r.scores.get(0, 1) - 0.2689).abs() < 1e-4);
        assert!((r.q_hat.row(0)[0] - 0.7311).abs() < 1e-4);
        assert!((r.q_hat.row(0)[1] - 0.2689).abs() < 1e-4);
        assert_eq!(r.best_slot, vec![0]);
    }

    #[test]
    fn identical_slots_read_back_exactly() {
        let u = [0.25f32, -0.5, 2.0];
        let slots: Vec<f32> = (0..5).flat_map(|_| u).collect();
        let mem = MemoryState::from_slots(1, 5, 3, 0.9, slots).unwrap();
        let r = mem.read(&latents(&[&[9., 1., -3.]])).unwrap();
        for (a, b) in r.q_hat.row(0).iter().zip(u) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_query_reads_block_mean() {
        let mem = MemoryState::from_slots(1, 2, 2, 0.9, vec![1., 3., 3., 5.]).unwrap();
        let q = LatentMatrix::new(1, 2, vec![0., 0.], vec![false]).unwrap();
        let r = mem.read(&q).unwrap();
        assert_eq!(r.q_hat.row(0), &[2.0, 4.0]);
        assert!(r.q_hat.is_valid(0));
    }

    #[test]
    fn save_load_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mdm");
        let mut mem = MemoryState::init(3, 4, 2, 0.99, 11).unwrap();
        mem.update(
            &latents(&[&[1., 0.], &[0., 1.], &[1., 1.]]),
            &latents(&[&[1., 0.], &[0., 1.], &[1., 1.]]),
        )
        .unwrap();
        mem.save(&path).unwrap();
        let back = MemoryState::load(&path).unwrap();
        assert_eq!(back.to_bytes(), mem.to_bytes());
        assert_eq!(back, mem);

        let bytes = mem.to_bytes();
        assert!(matches!(
            MemoryState::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            MemoryState::from_bytes(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn file_layout() {
        let mem = MemoryState::from_slots(1, 2, 1, 0.5, vec![1.0, 2.0]).unwrap();
        let b = mem.to_bytes();
        assert_eq!(&b[..4], b"MDM1");
        assert_eq!(&b[16..20], &0.5f32.to_le_bytes());
        assert_eq!(&b[20..22], &[0, 0]);
        assert_eq!(b.len(), 22 + 8);
    }

    proptest! {
        #[test]
        fn one_slot_per_block_changes(seed in any::<u64>(), alpha in 0.0f32..1.0) {
            let mut mem = MemoryState::init(3, 5, 4, alpha, seed).unwrap();
            let before = mem.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let rows: Vec<Vec<f32>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let q = LatentMatrix::from_rows(&rows).unwrap();
            mem.update(&q, &q).unwrap();
            for i in 0..3 {
                let changed = (0..5).filter(|&j| mem.slot(i, j) != before.slot(i, j)).count();
                prop_assert!(changed <= 1);
            }
        }

        #[test]
        fn selection_ignores_positive_rescaling(seed in any::<u64>(), scale in 0.01f32..100.0) {
            let mut mem = MemoryState::init(1, 6, 3, 0.5, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
            let q: Vec<f32> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sims: Vec<f64> = (0..6).map(|j| cosine_sim(mem.slot(0, j), &q)).collect();
            let k = mem.select_slot(0, &q);
            let unique = sims.iter().filter(|&&s| (s - sims[k]).abs() < 1e-6).count() == 1;
            let j = rng.random_range(0..6);
            for v in mem.slot_mut(0, j) { *v *= scale; }
            if unique {
                prop_assert_eq!(mem.select_slot(0, &q), k);
            }
        }
    }
}
