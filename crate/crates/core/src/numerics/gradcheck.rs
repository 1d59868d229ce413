//! Central finite-difference checks of analytic gradients.

use rand::seq::index;
use rand::Rng;

use super::{Float, ParamId, ParamStore};
use crate::error::Result;

/// Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
/// The floor absorbs rounding noise in the finite difference, which in 32-bit
/// is of order `eps·|loss| / step`.
pub const RELATIVE_ERROR_FLOOR: Float = if super::WIDE_FLOATS { 1e-2 } else { 1.0 };

/// Finite-difference step. Truncation error grows as `step²` times the third
/// derivative, which is what limits 64-bit accuracy at the larger step.
pub const STEP: Float = if super::WIDE_FLOATS { 1e-5 } else { 1e-3 };

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: Float,
    /// (parameter name, element index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, Float, Float)>,
}

impl GradCheckReport {
    fn record(&mut self, name: &str, idx: usize, analytic: Float, numeric: Float) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_relative_error || self.worst.is_none() {
            self.max_relative_error = self.max_relative_error.max(err);
            self.worst = Some((name.to_string(), idx, analytic, numeric));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_relative_error >= self.max_relative_error {
            self.max_relative_error = other.max_relative_error;
            self.worst = other.worst.or(self.worst.take());
        }
    }
}

pub fn relative_error(analytic: Float, numeric: Float) -> Float {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` gradients against central differences of `loss`.
///
/// For each id, up to `per_tensor` randomly chosen elements are perturbed
/// (all of them when the tensor is smaller). `analytic` is looked up by id
/// and treated as zero when absent.
pub fn check<R, F, G>(
    store: &mut ParamStore,
    ids: &[ParamId],
    per_tensor: usize,
    rng: &mut R,
    analytic: G,
    mut loss: F,
) -> Result<GradCheckReport>
where
    R: Rng + ?Sized,
    F: FnMut(&ParamStore) -> Result<Float>,
    G: Fn(ParamId, usize) -> Float,
{
    let mut report = GradCheckReport::default();
    for &id in ids {
        let numel = store.get(id).numel();
        let picks: Vec<usize> = if numel <= per_tensor {
            (0..numel).collect()
        } else {
            let mut v = index::sample(rng, numel, per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for idx in picks {
            let orig = store.get(id).values()[idx];
            store.get_mut(id).values_mut()[idx] = orig + STEP;
            let plus = loss(store)?;
            store.get_mut(id).values_mut()[idx] = orig - STEP;
            let minus = loss(store)?;
            store.get_mut(id).values_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let name = store.param(id).name.clone();
            report.record(&name, idx, analytic(id, idx), numeric);
        }
    }
    Ok(report)
}
