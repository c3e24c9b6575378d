//! Central-difference verification of tape gradients.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::{Error, Real, Result};

/// Relative errors use `max(|analytic|, |numeric|, DENOM_FLOOR)` as the denominator
/// so components that are zero up to rounding do not blow up the ratio.
pub const DENOM_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst component.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares analytic gradients of `loss` against central differences with step
/// `delta` for the parameters `ids`. `max_per_param` caps how many evenly
/// strided components of each parameter are perturbed.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    mut loss: F,
    delta: Real,
    tolerance: f64,
    max_per_param: Option<usize>,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Graph, Var)>,
{
    store.zero_grad();
    let (g, l) = loss(store)?;
    let base = g.scalar(l)?;
    g.backward(l, store)?;
    drop(g);
    let analytic: Vec<_> = ids.iter().map(|&id| store.grad(id).clone()).collect();

    let mut eval = |store: &ParamStore| -> Result<Real> {
        let (g, l) = loss(store)?;
        g.scalar(l)
    };
    let again = eval(store)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic { first: base as f64, second: again as f64 });
    }

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        tolerance,
    };
    for (k, &id) in ids.iter().enumerate() {
        let n = store.value(id).len();
        let stride = match max_per_param {
            Some(cap) if cap > 0 && n > cap => n.div_ceil(cap),
            _ => 1,
        };
        for flat in (0..n).step_by(stride) {
            let orig = store.value(id).as_slice().expect("contiguous")[flat];
            store.value_mut(id).as_slice_mut().expect("contiguous")[flat] = orig + delta;
            let plus = eval(store)?;
            store.value_mut(id).as_slice_mut().expect("contiguous")[flat] = orig - delta;
            let minus = eval(store)?;
            store.value_mut(id).as_slice_mut().expect("contiguous")[flat] = orig;

            let numeric = (plus as f64 - minus as f64) / (2.0 * delta as f64);
            let a = analytic[k].as_slice().expect("contiguous")[flat] as f64;
            let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).to_string(), flat));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
