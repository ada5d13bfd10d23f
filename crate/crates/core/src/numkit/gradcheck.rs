use super::params::ParamStore;

/// Gradients with magnitude below this are compared absolutely.
pub const DEFAULT_ABS_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

/// Relative error with an absolute floor on the denominator.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `params.grads` against central differences of `f` at every parameter.
///
/// `params.values` is perturbed in place and restored exactly.
pub fn grad_check<F>(f: F, params: &mut ParamStore, h: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    grad_check_with_floor(f, params, h, tol, DEFAULT_ABS_FLOOR)
}

pub fn grad_check_with_floor<F>(mut f: F, params: &mut ParamStore, h: f64, tol: f64, floor: f64) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: None,
        analytic: 0.0,
        numeric: 0.0,
        passed: true,
    };
    for i in 0..params.len() {
        let orig = params.values()[i];
        params.values_mut()[i] = orig + h;
        let fp = f(params);
        params.values_mut()[i] = orig - h;
        let fm = f(params);
        params.values_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let analytic = params.grads()[i];
        let err = rel_err(analytic, numeric, floor);
        if err > report.max_rel_err || !err.is_finite() {
            report.max_rel_err = err;
            report.worst_index = Some(i);
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_err < tol;
    report
}
