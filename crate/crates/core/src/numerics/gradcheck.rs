use crate::error::{ensure, Error, Result};

/// Compares an analytic gradient against central finite differences.
///
/// `f` maps a flat parameter vector to `(value, analytic gradient)`. Each
/// coordinate is perturbed with the fourth-order central stencil
/// `(f(x−2h) − 8f(x−h) + 8f(x+h) − f(x+2h)) / 12h`, which keeps truncation
/// error far below round-off for the step sizes used here. The return value
/// is `max_i |analytic_i − fd_i| / (|fd_i| + 1e−8)`.
pub fn finite_diff_check<F>(f: F, params: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    ensure!(eps > 0.0, "finite_diff_check needs eps > 0, got {eps}");
    let (value, analytic) = f(params)?;
    ensure!(value.is_finite(), "objective is non-finite at the base point");
    ensure!(
        analytic.len() == params.len(),
        "analytic gradient has {} entries for {} parameters",
        analytic.len(),
        params.len()
    );

    let eval = |p: &[f64]| -> Result<f64> {
        let (v, _) = f(p)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Contract("objective is non-finite under perturbation".into()))
        }
    };

    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for i in 0..params.len() {
        let x = params[i];
        let mut at = |offset: f64| -> Result<f64> {
            probe[i] = x + offset;
            let v = eval(&probe);
            probe[i] = x;
            v
        };
        let (m2, m1, p1, p2) = (at(-2.0 * eps)?, at(-eps)?, at(eps)?, at(2.0 * eps)?);
        let fd = ((m2 - p2) + 8.0 * (p1 - m1)) / (12.0 * eps);
        let rel = (analytic[i] - fd).abs() / (fd.abs() + 1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
