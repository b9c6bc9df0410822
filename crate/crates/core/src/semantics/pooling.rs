use super::{BinaryMask, SemanticMap};
use crate::error::ensure;
use crate::numcore::{Matrix, Tensor3};
use crate::Result;

/// One latent vector per semantic category.
///
/// `valid[i]` is false when category `i` had no pixels to pool; such rows
/// are kept at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMatrix {
    n: usize,
    c: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl LatentMatrix {
    pub fn new(n: usize, c: usize, data: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        ensure!(n > 0 && c > 0, "latent matrix dimensions must be positive");
        ensure!(
            data.len() == n * c,
            "latent data length {} != {n}x{c}",
            data.len()
        );
        ensure!(
            valid.len() == n,
            "validity flags {} != {n} rows",
            valid.len()
        );
        for (i, &ok) in valid.iter().enumerate() {
            ensure!(
                ok || data[i * c..(i + 1) * c].iter().all(|&v| v == 0.0),
                "invalid row {i} must be zero"
            );
        }
        Ok(Self { n, c, data, valid })
    }

    /// All rows valid.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let m = Matrix::from_rows(rows)?;
        let n = m.rows();
        Self::new(n, m.cols(), m.as_slice().to_vec(), vec![true; n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// The values as an `n × c` matrix (invalid rows are zero).
    pub fn to_matrix(&self) -> Matrix {
        Matrix::new(self.n, self.c, self.data.clone()).expect("dimensions checked at construction")
    }

    /// Applies `f` to every value of the valid rows.
    pub fn map_valid(&self, mut f: impl FnMut(f32) -> f32) -> LatentMatrix {
        let mut data = self.data.clone();
        for i in (0..self.n).filter(|&i| self.valid[i]) {
            for v in &mut data[i * self.c..(i + 1) * self.c] {
                *v = f(*v);
            }
        }
        LatentMatrix {
            data,
            ..self.clone()
        }
    }
}

/// Region-wise average pooling: row `i` is the mean feature over pixels
/// labelled `i`, restricted to known pixels when `region_mask` is given.
pub fn region_avg_pool(
    f: &Tensor3,
    s: &SemanticMap,
    region_mask: Option<&BinaryMask>,
) -> Result<LatentMatrix> {
    ensure!(
        (f.height(), f.width()) == s.dims(),
        "feature map {}x{} does not match semantic map {:?}",
        f.height(),
        f.width(),
        s.dims()
    );
    if let Some(m) = region_mask {
        ensure!(
            m.dims() == s.dims(),
            "mask {:?} does not match semantic map {:?}",
            m.dims(),
            s.dims()
        );
    }
    let (n, c) = (s.classes(), f.channels());
    let mut sums = vec![0.0f64; n * c];
    let mut counts = vec![0usize; n];
    for y in 0..s.height() {
        for x in 0..s.width() {
            if region_mask.is_some_and(|m| !m.is_known(y, x)) {
                continue;
            }
            let l = s.label(y, x);
            counts[l] += 1;
            for ch in 0..c {
                sums[l * c + ch] += f.get(ch, y, x) as f64;
            }
        }
    }
    let mut data = vec![0.0f32; n * c];
    for l in (0..n).filter(|&l| counts[l] > 0) {
        for ch in 0..c {
            data[l * c + ch] = (sums[l * c + ch] / counts[l] as f64) as f32;
        }
    }
    let valid = counts.iter().map(|&k| k > 0).collect();
    LatentMatrix::new(n, c, data, valid)
}

/// Paints each pixel with the latent row of its label.
pub fn broadcast_latents(q: &LatentMatrix, s: &SemanticMap) -> Result<Tensor3> {
    ensure!(
        s.max_label() < q.n(),
        "label {} has no latent row ({} rows)",
        s.max_label(),
        q.n()
    );
    Tensor3::from_fn(q.c(), s.height(), s.width(), |ch, y, x| {
        q.row(s.label(y, x))[ch]
    })
}

/// `(1 − m)·f_mem + m·f_v`: memory features fill corrupted pixels, known
/// pixels keep the features pooled from the visible image.
pub fn mask_fuse(f_mem: &Tensor3, f_v: &Tensor3, m: &BinaryMask) -> Result<Tensor3> {
    ensure!(
        f_mem.same_shape(f_v),
        "fusion inputs differ: {:?} vs {:?}",
        f_mem.shape(),
        f_v.shape()
    );
    ensure!(
        (f_v.height(), f_v.width()) == m.dims(),
        "mask {:?} does not match features {}x{}",
        m.dims(),
        f_v.height(),
        f_v.width()
    );
    Tensor3::from_fn(f_v.channels(), f_v.height(), f_v.width(), |c, y, x| {
        if m.is_known(y, x) {
            f_v.get(c, y, x)
        } else {
            f_mem.get(c, y, x)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stripes(h: usize, w: usize, classes: usize) -> SemanticMap {
        let labels = (0..h * w).map(|i| ((i % w) * classes / w) as u8).collect();
        SemanticMap::new(h, w, classes, labels).unwrap()
    }

    #[test]
    fn constant_features_pool_to_constant() {
        let s = stripes(3, 4, 2);
        let f = Tensor3::filled(2, 3, 4, 5.0).unwrap();
        let q = region_avg_pool(&f, &s, None).unwrap();
        assert!(q.as_slice().iter().all(|&v| v == 5.0));
        assert!(q.validity().iter().all(|&v| v));
    }

    #[test]
    fn piecewise_constant_pools_to_labels() {
        let s = stripes(2, 4, 2);
        let f = Tensor3::from_fn(1, 2, 4, |_, y, x| s.label(y, x) as f32).unwrap();
        let q = region_avg_pool(&f, &s, None).unwrap();
        assert_eq!(q.row(0), &[0.0]);
        assert_eq!(q.row(1), &[1.0]);
    }

    #[test]
    fn absent_label_is_invalid_zero() {
        let s = SemanticMap::new(1, 3, 4, vec![0, 1, 2]).unwrap();
        let f = Tensor3::filled(2, 1, 3, 1.0).unwrap();
        let q = region_avg_pool(&f, &s, None).unwrap();
        assert_eq!(q.row(3), &[0.0, 0.0]);
        assert!(!q.is_valid(3));
    }

    #[test]
    fn mask_excludes_corrupted_pixels() {
        let s = SemanticMap::new(1, 4, 2, vec![0, 0, 1, 1]).unwrap();
        let f = Tensor3::new(1, 1, 4, vec![1., 3., 10., 20.]).unwrap();
        let m = BinaryMask::new(1, 4, vec![1, 0, 0, 0]).unwrap();
        let q = region_avg_pool(&f, &s, Some(&m)).unwrap();
        assert_eq!(q.row(0), &[1.0]);
        assert!(!q.is_valid(1));
    }

    #[test]
    fn pooling_rejects_mismatched_dims() {
        let s = stripes(2, 4, 2);
        assert!(region_avg_pool(&Tensor3::zeros(1, 4, 2).unwrap(), &s, None).is_err());
        let m = BinaryMask::all_known(4, 2).unwrap();
        assert!(region_avg_pool(&Tensor3::zeros(1, 2, 4).unwrap(), &s, Some(&m)).is_err());
    }

    #[test]
    fn broadcast_cases() {
        let s = SemanticMap::uniform(2, 2).unwrap();
        let q = LatentMatrix::from_rows(&[[1.0f32, 2.0, 3.0]]).unwrap();
        let f = broadcast_latents(&q, &s).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(
                    [f.get(0, y, x), f.get(1, y, x), f.get(2, y, x)],
                    [1., 2., 3.]
                );
            }
        }

        let s = SemanticMap::new(1, 3, 3, vec![0, 2, 1]).unwrap();
        let q = LatentMatrix::new(3, 1, vec![4., 5., 0.], vec![true, true, false]).unwrap();
        assert_eq!(broadcast_latents(&q, &s).unwrap().as_slice(), &[4., 0., 5.]);

        let short = LatentMatrix::from_rows(&[[1.0f32]]).unwrap();
        assert!(broadcast_latents(&short, &s).is_err());
    }

    #[test]
    fn invalid_rows_must_be_zero() {
        assert!(LatentMatrix::new(1, 1, vec![1.0], vec![false]).is_err());
    }

    #[test]
    fn fuse_selects_branch_by_mask() {
        let a = Tensor3::from_fn(2, 3, 3, |c, y, x| (c * 9 + y * 3 + x) as f32).unwrap();
        let b = a.scale(-1.0);
        let ones = BinaryMask::all_known(3, 3).unwrap();
        let zeros = BinaryMask::all_corrupted(3, 3).unwrap();
        assert_eq!(mask_fuse(&a, &b, &ones).unwrap(), b);
        assert_eq!(mask_fuse(&a, &b, &zeros).unwrap(), a);

        let checker = BinaryMask::from_fn(3, 3, |y, x| (y + x) % 2 == 0).unwrap();
        let fused = mask_fuse(&a, &b, &checker).unwrap();
        for c in 0..2 {
            for y in 0..3 {
                for x in 0..3 {
                    let m = ((y + x) % 2 == 0) as u8 as f32;
                    let expect = (1.0 - m) * a.get(c, y, x) + m * b.get(c, y, x);
                    assert_eq!(fused.get(c, y, x), expect);
                }
            }
        }
    }

    #[test]
    fn fuse_rejects_shape_mismatch() {
        let a = Tensor3::zeros(1, 2, 2).unwrap();
        let m = BinaryMask::all_known(2, 2).unwrap();
        assert!(mask_fuse(&a, &Tensor3::zeros(2, 2, 2).unwrap(), &m).is_err());
        assert!(mask_fuse(&a, &a, &BinaryMask::all_known(2, 3).unwrap()).is_err());
    }

    fn random_case(seed: u64) -> (Tensor3, SemanticMap, BinaryMask) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, c, n) = (
            rng.random_range(1..6),
            rng.random_range(1..6),
            rng.random_range(1..4),
            rng.random_range(1..5),
        );
        let f = Tensor3::from_fn(c, h, w, |_, _, _| rng.random_range(-2.0..2.0)).unwrap();
        let labels = (0..h * w).map(|_| rng.random_range(0..n) as u8).collect();
        let s = SemanticMap::new(h, w, n, labels).unwrap();
        let m =
            BinaryMask::new(h, w, (0..h * w).map(|_| rng.random_range(0..2)).collect()).unwrap();
        (f, s, m)
    }

    proptest! {
        #[test]
        fn pool_then_broadcast_is_identity_on_region_constant_maps(seed in any::<u64>()) {
            let (f, s, _) = random_case(seed);
            let q = region_avg_pool(&f, &s, None).unwrap();
            let flat = broadcast_latents(&q, &s).unwrap();
            let q2 = region_avg_pool(&flat, &s, None).unwrap();
            prop_assert_eq!(broadcast_latents(&q2, &s).unwrap(), flat);
        }

        #[test]
        fn pooling_is_a_true_mean(seed in any::<u64>()) {
            let (f, s, m) = random_case(seed);
            let q = region_avg_pool(&f, &s, Some(&m)).unwrap();
            let mut counts = vec![0usize; s.classes()];
            for y in 0..s.height() {
                for x in 0..s.width() {
                    if m.is_known(y, x) { counts[s.label(y, x)] += 1; }
                }
            }
            for ch in 0..f.channels() {
                let mut direct = 0.0f64;
                for y in 0..s.height() {
                    for x in 0..s.width() {
                        if m.is_known(y, x) { direct += f.get(ch, y, x) as f64; }
                    }
                }
                let pooled: f64 = (0..s.classes())
                    .map(|i| counts[i] as f64 * q.row(i)[ch] as f64)
                    .sum();
                prop_assert!((pooled - direct).abs() < 1e-4);
            }
        }

        #[test]
        fn fusing_a_map_with_itself_is_identity(seed in any::<u64>()) {
            let (f, _, m) = random_case(seed);
            prop_assert_eq!(mask_fuse(&f, &f, &m).unwrap(), f);
        }
    }
}
