//! Central finite-difference checks of analytic gradients.
//!
//! Only forward evaluations are used here, so the check stays independent of
//! the reverse sweep it validates.

use super::{Array, ParamId, ParamStore};

/// Denominator floor for the relative error, so entries whose true gradient
/// is numerically zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(parameter name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.worst.is_some() && (self.worst.is_none() || other.max_rel_error > self.max_rel_error) {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// `(f(p + h) - f(p - h)) / 2h` for one scalar entry of one parameter.
pub fn central_difference<E>(
    store: &mut ParamStore,
    id: ParamId,
    index: usize,
    step: f64,
    loss: &mut impl FnMut(&ParamStore) -> Result<f64, E>,
) -> Result<f64, E> {
    let original = store.get(id).data()[index];
    store.get_mut(id).data_mut()[index] = original + step;
    let plus = loss(store);
    store.get_mut(id).data_mut()[index] = original - step;
    let minus = loss(store);
    store.get_mut(id).data_mut()[index] = original;
    Ok((plus? - minus?) / (2.0 * step))
}

/// Relative disagreement between the `h` and `h/2` estimates above which
/// the stencil is taken to straddle a kink (a max-pool or assignment switch).
pub const KINK_TOLERANCE: f64 = 1e-4;
const MAX_STEP_SHRINKS: usize = 2;

/// Richardson-extrapolated central difference: `(4 D(h/2) - D(h)) / 3`
/// cancels the `h^2` error term, so a larger `step` can be used and rounding
/// noise stays small. When `D(h)` and `D(h/2)` disagree by more than a smooth
/// function allows, the step shrinks tenfold (at most twice) so the stencil
/// stops crossing the nearest non-differentiable point.
pub fn richardson_difference<E>(
    store: &mut ParamStore,
    id: ParamId,
    index: usize,
    step: f64,
    loss: &mut impl FnMut(&ParamStore) -> Result<f64, E>,
) -> Result<f64, E> {
    let mut h = step;
    for shrink in 0..=MAX_STEP_SHRINKS {
        let coarse = central_difference(store, id, index, h, loss)?;
        let fine = central_difference(store, id, index, h / 2.0, loss)?;
        if relative_error(coarse, fine) <= KINK_TOLERANCE || shrink == MAX_STEP_SHRINKS {
            return Ok((4.0 * fine - coarse) / 3.0);
        }
        h /= 10.0;
    }
    unreachable!("the last pass returns")
}

/// Compare `analytic` (one array per parameter, store order) against
/// Richardson-extrapolated differences at the listed `(parameter, flat
/// index)` entries.
pub fn check_entries<E>(
    store: &mut ParamStore,
    analytic: &[Array],
    entries: &[(ParamId, usize)],
    step: f64,
    mut loss: impl FnMut(&ParamStore) -> Result<f64, E>,
) -> Result<GradCheckReport, E> {
    let mut report = GradCheckReport::default();
    for &(id, index) in entries {
        let numeric = richardson_difference(store, id, index, step, &mut loss)?;
        let a = analytic[id.index()].data()[index];
        let err = relative_error(a, numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((store.name(id).to_string(), index, a, numeric));
        }
    }
    Ok(report)
}

/// Every scalar entry of every parameter.
pub fn all_entries(store: &ParamStore) -> Vec<(ParamId, usize)> {
    store
        .ids()
        .flat_map(|id| (0..store.get(id).len()).map(move |i| (id, i)))
        .collect()
}

/// Up to `per_param` evenly spaced entries from each parameter, so every
/// tensor is represented.
pub fn strided_entries(store: &ParamStore, per_param: usize, offset: usize) -> Vec<(ParamId, usize)> {
    let mut out = Vec::new();
    for id in store.ids() {
        let n = store.get(id).len();
        if n <= per_param {
            out.extend((0..n).map(|i| (id, i)));
        } else {
            let stride = n / per_param;
            out.extend((0..per_param).map(|j| (id, (j * stride + offset % stride) % n)));
        }
    }
    out
}
