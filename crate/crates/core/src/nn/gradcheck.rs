use super::{NnError, Tensor};

/// Compare an analytic gradient against central differences.
///
/// Returns `max_i |analytic_i − numeric_i| / max(1, |numeric_i|)`. A missing
/// analytic gradient (frozen input) is compared as all zeros.
pub fn finite_diff_check(
    f: &mut dyn FnMut(&Tensor) -> f64,
    x: &Tensor,
    analytic: Option<&Tensor>,
    h: f64,
) -> Result<f64, NnError> {
    if let Some(a) = analytic {
        if a.shape() != x.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "gradient {:?} vs input {:?}",
                a.shape(),
                x.shape()
            )));
        }
    }
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(NnError::NonFinite(format!("f not finite around coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.map_or(0.0, |a| a.data()[i]);
        if !a.is_finite() {
            return Err(NnError::NonFinite(format!("analytic gradient at {i}")));
        }
        worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}
