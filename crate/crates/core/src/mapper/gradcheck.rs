use crate::Result;

use super::network::{Batch, MapperNetwork};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / (|analytic| + 1e-8)` over resolvable entries.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose perturbation flipped a ReLU, where the loss is not differentiable.
    pub skipped: usize,
    /// Entries too small for a relative comparison at the rounding floor of the
    /// central difference; these are compared in absolute terms instead.
    pub unresolved: usize,
    /// `max |analytic - numeric|` over unresolved entries, in units of the rounding floor.
    pub max_unresolved_error: f64,
    /// Rounding floor `4 eps |loss| / h` of the central difference.
    pub rounding_floor: f64,
}

impl GradCheckReport {
    /// Relative error below `tol` on resolvable entries and agreement within
    /// `floor_multiple` rounding floors elsewhere.
    pub fn passes(&self, tol: f64, floor_multiple: f64) -> bool {
        self.max_rel_error < tol && self.max_unresolved_error <= floor_multiple
    }
}

/// Compare analytic gradients with central differences of step `h`.
///
/// An entry is resolvable when `|analytic| + 1e-8` exceeds the rounding floor divided
/// by `resolution`; below that the difference quotient cannot carry a relative error
/// of `resolution`.
pub fn check_gradients(
    net: &MapperNetwork,
    batch: &Batch,
    alpha: f64,
    h: f64,
    resolution: f64,
) -> Result<GradCheckReport> {
    let base = net.pass(batch, alpha, true)?;
    let pattern = MapperNetwork::relu_pattern(&base);
    let mut scratch = net.clone();
    let floor = 4.0 * f64::EPSILON * base.losses.total.abs().max(f64::MIN_POSITIVE) / h;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        unresolved: 0,
        max_unresolved_error: 0.0,
        rounding_floor: floor,
    };
    for (pi, grad) in base.grads.iter().enumerate() {
        for k in 0..grad.len() {
            let original = scratch.parameters()[pi][k];
            let mut eval = |value: f64| -> Result<(f64, bool)> {
                scratch.parameters_mut()[pi][k] = value;
                let pass = scratch.pass(batch, alpha, false)?;
                Ok((pass.losses.total, MapperNetwork::relu_pattern(&pass) == pattern))
            };
            let (plus, same_plus) = eval(original + h)?;
            let (minus, same_minus) = eval(original - h)?;
            scratch.parameters_mut()[pi][k] = original;
            if !(same_plus && same_minus) {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grad[k];
            let denom = analytic.abs() + 1e-8;
            report.checked += 1;
            if denom * resolution < floor {
                report.unresolved += 1;
                report.max_unresolved_error = report.max_unresolved_error.max((analytic - numeric).abs() / floor);
            } else {
                report.max_rel_error = report.max_rel_error.max((analytic - numeric).abs() / denom);
            }
        }
    }
    Ok(report)
}
