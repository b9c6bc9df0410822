//! Randomised central-difference checks of the analytic loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::ensure;
use crate::losses::{rec_grad, rec_loss, tv_grad, tv_loss};
use crate::numcore::{grad_check, Tensor3};
use crate::Result;

/// Smallest gap kept between values the losses are non-smooth across.
const KINK_MARGIN: f32 = 0.05;
const STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckRecord {
    pub loss: &'static str,
    pub point: usize,
    pub max_rel_error: f64,
}

/// Checks `rec_loss` and `tv_loss` at `points` random `c × h × w` inputs
/// each, drawn so that no absolute value term sits near its kink.
pub fn check_loss_gradients(
    points: usize,
    shape: (usize, usize, usize),
    seed: u64,
) -> Result<Vec<GradCheckRecord>> {
    let (c, h, w) = shape;
    ensure!(
        c > 0 && h > 0 && w > 0,
        "gradient check shape must be non-empty"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * points);
    for point in 0..points {
        let gt = Tensor3::from_fn(c, h, w, |_, _, _| rng.random_range(0.0..1.0))?;
        let hat = Tensor3::from_fn(c, h, w, |ch, y, x| {
            let g = gt.get(ch, y, x);
            loop {
                let v = rng.random_range(0.0..1.0);
                if (v - g).abs() > KINK_MARGIN {
                    break v;
                }
            }
        })?;
        let analytic = rec_grad(&hat, &gt)?;
        let max_rel_error = grad_check(
            |t: &Tensor3| rec_loss(t, &gt).expect("shapes agree"),
            &hat,
            analytic.as_slice(),
            STEP,
        )?;
        out.push(GradCheckRecord {
            loss: "rec",
            point,
            max_rel_error,
        });

        let t = tv_point(&mut rng, c, h, w)?;
        let max_rel_error = grad_check(tv_loss, &t, tv_grad(&t).as_slice(), STEP)?;
        out.push(GradCheckRecord {
            loss: "tv",
            point,
            max_rel_error,
        });
    }
    Ok(out)
}

/// Random image whose horizontal and vertical neighbour differences all
/// exceed the kink margin.
fn tv_point(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Result<Tensor3> {
    let mut t = Tensor3::zeros(c, h, w)?;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let left = (x > 0).then(|| t.get(ch, y, x - 1));
                let up = (y > 0).then(|| t.get(ch, y - 1, x));
                let v = loop {
                    let v = rng.random_range(0.0..1.0);
                    let clear = |n: Option<f32>| n.is_none_or(|n| (v - n).abs() > KINK_MARGIN);
                    if clear(left) && clear(up) {
                        break v;
                    }
                };
                t.set(ch, y, x, v);
            }
        }
    }
    Ok(t)
}
