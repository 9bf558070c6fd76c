use super::params::Parameters;
use crate::error::{Error, Result};

/// Compares an analytic gradient with central differences.
///
/// `loss_fn` maps a flat parameter vector to `(loss, analytic gradient)`.
/// Returns `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let (loss, analytic) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss at base point is {loss}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let (up, _) = loss_fn(&probe)?;
        probe[i] = orig - eps;
        let (down, _) = loss_fn(&probe)?;
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss while perturbing parameter {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// [`grad_check`] over a structured parameter set whose gradient has the
/// same type.
pub fn grad_check_params<P, F>(params: &P, mut loss_fn: F, eps: f64) -> Result<f64>
where
    P: Parameters + Clone,
    F: FnMut(&P) -> Result<(f64, P)>,
{
    let mut scratch = params.clone();
    let base = params.flatten();
    grad_check(
        |flat| {
            scratch.load_flat(flat)?;
            let (loss, grad) = loss_fn(&scratch)?;
            Ok((loss, grad.flatten()))
        },
        &base,
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(p: &[f64]) -> Result<(f64, Vec<f64>)> {
        let loss = 0.5 * p.iter().map(|x| x * x).sum::<f64>();
        Ok((loss, p.to_vec()))
    }

    #[test]
    fn quadratic_is_exact() {
        let p = [0.3, -1.7, 4.2, 0.0, 12.5];
        let err = grad_check(quadratic, &p, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn doubled_gradient_detected() {
        let p = [0.5, -0.25, 0.1];
        let err = grad_check(
            |p| {
                let (l, g) = quadratic(p)?;
                Ok((l, g.iter().map(|x| 2.0 * x).collect()))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!((err - 0.5).abs() < 1e-6, "{err}");
    }

    #[test]
    fn rejects_bad_eps_and_nonfinite() {
        assert!(grad_check(quadratic, &[1.0], 1e-2).is_err());
        assert!(grad_check(quadratic, &[1.0], 1e-9).is_err());
        let r = grad_check(|_| Ok((f64::NAN, vec![0.0])), &[1.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
