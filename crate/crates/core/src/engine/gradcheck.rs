//! Central finite-difference gradient checking.

use super::Tensor;
use crate::error::Result;

/// `|a - n| / max(|a|, |n|, 1e-8)`; zero when both are exactly zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error between the analytic gradient returned by `f` and a
/// central difference with step `h`, over every input element.
///
/// `f` maps an input to `(scalar value, d value / d input)`.
pub fn grad_check<F>(f: F, input: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    grad_check_masked(f, input, h, |_| true)
}

/// Like [`grad_check`] but only elements where `include(index)` holds are compared.
pub fn grad_check_masked<F, M>(f: F, input: &Tensor, h: f64, include: M) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
    M: Fn(usize) -> bool,
{
    let (_, analytic) = f(input)?;
    input.same_shape(&analytic, "analytic gradient")?;
    let mut probe = input.clone();
    let mut worst: f64 = 0.0;
    for i in 0..input.len() {
        if !include(i) {
            continue;
        }
        let x = input.data()[i];
        probe.data_mut()[i] = x + h;
        let (plus, _) = f(&probe)?;
        probe.data_mut()[i] = x - h;
        let (minus, _) = f(&probe)?;
        probe.data_mut()[i] = x;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}
