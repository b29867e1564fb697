use super::tape::{Gradients, Param};
use super::TensorError;

/// Compares autodiff gradients against central finite differences.
///
/// `f` evaluates the scalar loss for the given parameter values and, when
/// asked, the gradient map. Returns the maximum over all parameter entries
/// of `|autodiff - fd| / max(1, |fd|)`.
pub fn grad_check<F>(mut f: F, params: &mut [Param], fd_step: f64) -> Result<f64, TensorError>
where
    F: FnMut(&[Param]) -> Result<(f64, Gradients), TensorError>,
{
    assert!(
        fd_step > 1e-7 && fd_step < 1e-3,
        "finite-difference step {fd_step} outside (1e-7, 1e-3)"
    );
    let (_, grads) = f(params)?;
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        let id = params[k].id();
        let analytic = grads.get(id).cloned();
        for idx in 0..params[k].value.len() {
            let orig = params[k].value.as_slice().unwrap()[idx];
            params[k].value.as_slice_mut().unwrap()[idx] = orig + fd_step;
            let (plus, _) = f(params)?;
            params[k].value.as_slice_mut().unwrap()[idx] = orig - fd_step;
            let (minus, _) = f(params)?;
            params[k].value.as_slice_mut().unwrap()[idx] = orig;
            let fd = (plus - minus) / (2.0 * fd_step);
            let ad = analytic.as_ref().map_or(0.0, |g| g.as_slice().unwrap()[idx]);
            worst = worst.max((ad - fd).abs() / fd.abs().max(1.0));
        }
    }
    Ok(worst)
}
