use serde::Serialize;

use crate::error::ensure;
use crate::numcore::Tensor3;
use crate::Result;

const PSNR_CAP: f64 = 100.0;
const MSE_FLOOR: f64 = 1e-10;
const SSIM_WINDOW: usize = 8;
const SSIM_STRIDE: usize = 4;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Image-quality summary of one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// Mean absolute error in percent.
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl Metrics {
    pub fn compute(i_hat: &Tensor3, i_gt: &Tensor3) -> Result<Self> {
        Ok(Self {
            l1: l1_metric(i_hat, i_gt)?,
            psnr: psnr(i_hat, i_gt)?,
            ssim: ssim(i_hat, i_gt)?,
        })
    }
}

fn check_pair(i_hat: &Tensor3, i_gt: &Tensor3) -> Result<()> {
    ensure!(
        i_hat.same_shape(i_gt),
        "metric inputs differ: {:?} vs {:?}",
        i_hat.shape(),
        i_gt.shape()
    );
    for (name, t) in [("prediction", i_hat), ("reference", i_gt)] {
        if let Some(v) = t.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(crate::Error::contract(format!(
                "{name} value {v} is outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// `10·log10(1/MSE)`, capped at 100 for (near-)identical images.
pub fn psnr(i_hat: &Tensor3, i_gt: &Tensor3) -> Result<f64> {
    check_pair(i_hat, i_gt)?;
    let se: f64 = i_hat
        .as_slice()
        .iter()
        .zip(i_gt.as_slice())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    let mse = se / i_hat.len() as f64;
    if mse < MSE_FLOOR {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean absolute difference, in percent.
pub fn l1_metric(i_hat: &Tensor3, i_gt: &Tensor3) -> Result<f64> {
    check_pair(i_hat, i_gt)?;
    let sum: f64 = i_hat
        .as_slice()
        .iter()
        .zip(i_gt.as_slice())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    Ok(100.0 * sum / i_hat.len() as f64)
}

/// Windowed SSIM averaged over windows and channels. Windows are 8×8 with
/// stride 4; an image side shorter than 8 uses a single window spanning
/// that whole side.
pub fn ssim(i_hat: &Tensor3, i_gt: &Tensor3) -> Result<f64> {
    check_pair(i_hat, i_gt)?;
    let (c, h, w) = i_hat.shape();
    let (wh, ww) = (SSIM_WINDOW.min(h), SSIM_WINDOW.min(w));
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let (a, b) = (i_hat.plane(ch), i_gt.plane(ch));
        for oy in (0..=h - wh).step_by(SSIM_STRIDE) {
            for ox in (0..=w - ww).step_by(SSIM_STRIDE) {
                total += window_ssim(a, b, w, oy, ox, wh, ww);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

fn window_ssim(a: &[f32], b: &[f32], w: usize, oy: usize, ox: usize, wh: usize, ww: usize) -> f64 {
    let n = (wh * ww) as f64;
    let pixels = || (oy..oy + wh).flat_map(move |y| (ox..ox + ww).map(move |x| y * w + x));
    let (mut sa, mut sb) = (0.0, 0.0);
    for i in pixels() {
        sa += a[i] as f64;
        sb += b[i] as f64;
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for i in pixels() {
        let (da, db) = (a[i] as f64 - ma, b[i] as f64 - mb);
        va += da * da;
        vb += db * db;
        cov += da * db;
    }
    // Unbiased (n − 1) normalisation; a 1×1 window has no spread at all.
    let denom = (n - 1.0).max(1.0);
    let (va, vb, cov) = (va / denom, vb / denom, cov / denom);
    ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> Tensor3 {
        Tensor3::from_fn(3, h, w, f).unwrap()
    }

    #[test]
    fn identical_images() {
        let x = img(16, 12, |c, y, x| ((c + 3 * y + 5 * x) % 11) as f32 / 10.0);
        assert_eq!(psnr(&x, &x).unwrap(), 100.0);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(l1_metric(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn uniform_offset_gives_twenty_db() {
        let a = img(8, 8, |_, _, _| 0.0);
        let b = img(8, 8, |_, _, _| 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-6);
    }

    #[test]
    fn constant_half_offset_is_fifty_percent() {
        let a = img(5, 7, |_, _, _| 0.5);
        let b = img(5, 7, |_, _, _| 0.0);
        assert!((l1_metric(&a, &b).unwrap() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let a = img(4, 4, |_, _, _| 0.5);
        let b = img(4, 4, |_, y, _| if y == 2 { 1.5 } else { 0.5 });
        for r in [psnr(&a, &b), ssim(&a, &b), l1_metric(&a, &b)] {
            assert!(matches!(r, Err(Error::Contract(_))));
        }
    }

    #[test]
    fn small_images_use_one_window() {
        let a = img(3, 5, |c, y, x| (c + y + x) as f32 / 10.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &b).unwrap() < 0.5);
    }

    proptest! {
        #[test]
        fn psnr_decreases_with_mse(d1 in 0.001f32..0.4, extra in 0.001f32..0.4) {
            let a = img(8, 8, |_, _, _| 0.0);
            let near = img(8, 8, |_, _, _| d1);
            let far = img(8, 8, |_, _, _| (d1 + extra).min(1.0));
            prop_assert!(psnr(&a, &near).unwrap() > psnr(&a, &far).unwrap());
        }

        #[test]
        fn ssim_of_self_is_one(h in 1usize..20, w in 1usize..20, seed in any::<u32>()) {
            let x = img(h, w, |c, y, x| {
                ((seed as usize).wrapping_mul(31) ^ (c * 7 + y * 13 + x * 17)) as f32 % 97.0 / 96.0
            });
            prop_assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
