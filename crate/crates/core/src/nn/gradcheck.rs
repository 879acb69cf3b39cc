use alloc::vec::Vec;

use super::net::DenseNet;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const FD_ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst component.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, FD_ABS_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(FD_ABS_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares `analytic` (∂loss/∂params of `net`) against central differences
/// of `loss` on every parameter. Passes iff the worst relative error is
/// below `tolerance`.
pub fn finite_difference_check<F>(net: &DenseNet, mut loss: F, analytic: &[f64], tolerance: f64) -> GradCheckReport
where
    F: FnMut(&DenseNet) -> f64,
{
    assert_eq!(analytic.len(), net.param_count(), "analytic gradient has wrong length");
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        passed: true,
    };
    for i in 0..net.param_count() {
        let numeric = central_difference(&mut probe, i, &mut loss);
        let err = relative_error(analytic[i], numeric);
        if report.checked == 0 || err.is_nan() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    report.passed = report.max_rel_error < tolerance;
    report
}

fn central_difference<F: FnMut(&DenseNet) -> f64>(probe: &mut DenseNet, i: usize, loss: &mut F) -> f64 {
    let orig = probe.params()[i];
    probe.params_mut()[i] = orig + FD_STEP;
    let up = loss(probe);
    probe.params_mut()[i] = orig - FD_STEP;
    let down = loss(probe);
    probe.params_mut()[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

/// Central differences of a scalar function of a plain vector.
pub fn numeric_gradient<F: FnMut(&[f64]) -> f64>(x: &[f64], mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}
