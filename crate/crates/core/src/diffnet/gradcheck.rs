use super::params::ParamStore;
use super::Real;
use crate::error::{Error, Result};

/// `|a − n| / max(|a|, |n|, floor)`, with both-zero defined as 0.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        return 0.0;
    }
    (analytic - numeric).abs() / scale.max(floor)
}

/// Denominator floor: below it the comparison is absolute. Scales with the
/// rounding noise of a central difference in `T`.
fn floor_for<T: Real>(h: T) -> f64 {
    1e-4f64.max(T::epsilon().as_f64() * 1e3 / h.as_f64())
}

/// Compares analytic gradients against central finite differences over every
/// parameter. `loss` must return the scalar loss and add its analytic
/// gradient into `params` grads. Returns the worst relative error.
pub fn grad_check<T: Real>(
    params: &mut ParamStore<T>,
    h: T,
    loss: impl FnMut(&mut ParamStore<T>) -> Result<T>,
) -> Result<f64> {
    grad_check_sampled(params, h, usize::MAX, loss)
}

/// Like [`grad_check`] but probes at most `per_section` entries of each
/// section: entries with a nonzero analytic gradient first, then an even
/// stride over the rest.
pub fn grad_check_sampled<T: Real>(
    params: &mut ParamStore<T>,
    h: T,
    per_section: usize,
    mut loss: impl FnMut(&mut ParamStore<T>) -> Result<T>,
) -> Result<f64> {
    params.zero_grads();
    let base = loss(params)?;
    let analytic: Vec<Vec<T>> = params.sections().iter().map(|s| s.grads.clone()).collect();
    params.zero_grads();
    let again = loss(params)?;
    if base.as_f64().to_bits() != again.as_f64().to_bits() {
        return Err(Error::Oracle(format!(
            "loss closure is not deterministic: {} vs {}",
            base.as_f64(),
            again.as_f64()
        )));
    }
    let floor = floor_for(h);
    let two_h = (h + h).as_f64();
    let mut worst = 0.0f64;
    for (s, grads) in analytic.iter().enumerate() {
        for i in probe_indices(grads, per_section) {
            let original = params.sections()[s].values[i];
            params.sections_mut()[s].values[i] = original + h;
            let plus = loss(params)?;
            params.sections_mut()[s].values[i] = original - h;
            let minus = loss(params)?;
            params.sections_mut()[s].values[i] = original;
            params.zero_grads();
            let numeric = (plus.as_f64() - minus.as_f64()) / two_h;
            let err = relative_error(grads[i].as_f64(), numeric, floor);
            if err.is_nan() {
                return Err(Error::Oracle(format!(
                    "NaN while probing `{}`[{i}]",
                    params.sections()[s].name
                )));
            }
            worst = worst.max(err);
        }
    }
    for (section, g) in params.sections_mut().iter_mut().zip(analytic) {
        section.grads = g;
    }
    Ok(worst)
}

fn probe_indices<T: Real>(grads: &[T], cap: usize) -> Vec<usize> {
    if grads.len() <= cap {
        return (0..grads.len()).collect();
    }
    let half = cap / 2;
    let mut picked: Vec<usize> = grads
        .iter()
        .enumerate()
        .filter(|(_, g)| **g != T::zero())
        .map(|(i, _)| i)
        .take(half.max(1))
        .collect();
    let stride = (grads.len() / (cap - picked.len()).max(1)).max(1);
    let mut i = 0;
    while picked.len() < cap && i < grads.len() {
        if !picked.contains(&i) {
            picked.push(i);
        }
        i += stride;
    }
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::SectionKind;

    fn scalar(value: f64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store
            .add("w", vec![1], SectionKind::Weight, vec![value])
            .unwrap();
        store
    }

    #[test]
    fn quadratic_loss() {
        let mut store = scalar(3.0);
        let err = grad_check(&mut store, 1e-5, |p| {
            let w = p.sections()[0].values[0];
            p.sections_mut()[0].grads[0] += w;
            Ok(0.5 * w * w)
        })
        .unwrap();
        assert!(err < 1e-9, "{err}");
        assert_eq!(store.sections()[0].grads[0], 3.0);
    }

    #[test]
    fn constant_loss_reports_zero() {
        let mut store = scalar(1.0);
        let err = grad_check(&mut store, 1e-5, |_| Ok(4.0)).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut store = scalar(2.0);
        let err = grad_check(&mut store, 1e-5, |p| {
            let w = p.sections()[0].values[0];
            p.sections_mut()[0].grads[0] += 2.0 * w;
            Ok(0.5 * w * w)
        })
        .unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn nondeterministic_closure_is_rejected() {
        let mut store = scalar(1.0);
        let mut calls = 0.0;
        let res = grad_check(&mut store, 1e-5, |_| {
            calls += 1.0;
            Ok(calls)
        });
        assert!(matches!(res, Err(Error::Oracle(_))));
    }
}
