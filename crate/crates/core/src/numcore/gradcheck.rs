//! Central-difference gradient verification.

use super::{Matrix, Tensor3};
use crate::error::ensure;
use crate::{Error, Result};

/// A flat parameter vector that can be perturbed coordinate by coordinate.
pub trait Parameters: Sized {
    fn values(&self) -> &[f32];
    fn with_values(&self, values: Vec<f32>) -> Self;
}

impl Parameters for Tensor3 {
    fn values(&self) -> &[f32] {
        self.as_slice()
    }

    fn with_values(&self, values: Vec<f32>) -> Self {
        self.with_data(values)
    }
}

impl Parameters for Matrix {
    fn values(&self) -> &[f32] {
        self.as_slice()
    }

    fn with_values(&self, values: Vec<f32>) -> Self {
        self.with_data(values)
    }
}

/// Compares `analytic` against central differences of `f` at `input` and
/// returns the largest relative error, using `max(|a|, |b|, 1e-8)` as the
/// denominator.
///
/// Perturbed inputs are rounded to `f32`, so the quotient uses the step that
/// was actually realised (`x⁺ − x⁻`) rather than `2·eps`.
pub fn grad_check<P: Parameters>(
    f: impl Fn(&P) -> f64,
    input: &P,
    analytic: &[f32],
    eps: f64,
) -> Result<f64> {
    ensure!(eps > 0.0, "eps must be positive, got {eps}");
    let base = input.values();
    ensure!(
        analytic.len() == base.len(),
        "analytic gradient has {} entries for {} parameters",
        analytic.len(),
        base.len()
    );
    let mut scratch = base.to_vec();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let x = base[i];
        let plus = (x as f64 + eps) as f32;
        let minus = (x as f64 - eps) as f32;
        scratch[i] = plus;
        let f_plus = f(&input.with_values(scratch.clone()));
        scratch[i] = minus;
        let f_minus = f(&input.with_values(scratch.clone()));
        scratch[i] = x;
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(Error::Diagnostic(format!(
                "non-finite function value at coordinate {i} (f+ = {f_plus}, f- = {f_minus})"
            )));
        }
        let numeric = (f_plus - f_minus) / (plus as f64 - minus as f64);
        let a = analytic[i] as f64;
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
