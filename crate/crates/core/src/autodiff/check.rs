use ndarray::ArrayD;

use crate::autodiff::Params;
use crate::error::{Error, Result};

/// Compare analytic gradients against central finite differences.
///
/// `loss_fn` must be deterministic in `params` (fixed data, fixed seeds).
/// `analytic` is the gradient at the unperturbed point, parallel to the
/// parameter declaration order. Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn finite_diff_check<F>(
    params: &Params,
    analytic: &[ArrayD<f64>],
    eps: f64,
    mut loss_fn: F,
) -> Result<f64>
where
    F: FnMut(&Params) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::invalid_argument("eps must be positive"));
    }
    if analytic.len() != params.len() {
        return Err(Error::invalid_argument(
            "analytic gradient count does not match parameter count",
        ));
    }
    let flat_analytic: Vec<f64> = analytic.iter().flat_map(|a| a.iter().copied()).collect();
    let n = params.num_scalars();
    assert_eq!(flat_analytic.len(), n);

    let mut work = params.clone();
    let mut max_rel = 0.0f64;
    for i in 0..n {
        let orig = *work.coord_mut(i);
        *work.coord_mut(i) = orig + eps;
        let plus = loss_fn(&work)?;
        *work.coord_mut(i) = orig - eps;
        let minus = loss_fn(&work)?;
        *work.coord_mut(i) = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::numeric("non-finite loss during finite differences"));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = flat_analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
