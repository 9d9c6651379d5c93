//! Central finite-difference verification of analytic gradients.

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Index of the entry with the largest relative error.
    pub worst: usize,
    pub failures: Vec<usize>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative error `|a − n| / max(|a|, |n|)`. When both values are below
/// `floor` in magnitude the denominator is `floor`, so entries that are zero
/// analytically are judged by their absolute deviation.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Compare `analytic` against `(f(θ + εeᵢ) − f(θ − εeᵢ)) / 2ε` for every
/// coordinate. An entry fails when its relative error exceeds `rel_tol`.
pub fn check<F>(f: F, theta: &[f64], analytic: &[f64], eps: f64, rel_tol: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(theta.len(), analytic.len(), "gradient length");
    let mut work = theta.to_vec();
    let mut report = GradCheckReport {
        checked: theta.len(),
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        worst: 0,
        failures: Vec::new(),
    };
    for i in 0..theta.len() {
        work[i] = theta[i] + eps;
        let up = f(&work);
        work[i] = theta[i] - eps;
        let down = f(&work);
        work[i] = theta[i];
        let numeric = (up - down) / (2.0 * eps);
        let abs = (analytic[i] - numeric).abs();
        let rel = relative_error(analytic[i], numeric, 1e-6);
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = i;
        }
        if rel > rel_tol {
            report.failures.push(i);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient_passes() {
        let f = |x: &[f64]| x[0].powi(3) + 2.0 * x[0] * x[1];
        let x = [1.5, -0.5];
        let g = [3.0 * 1.5f64.powi(2) + 2.0 * -0.5, 2.0 * 1.5];
        let r = check(f, &x, &g, 1e-5, 1e-6);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn wrong_gradient_fails() {
        let f = |x: &[f64]| x[0] * x[0];
        let r = check(f, &[2.0], &[3.0], 1e-5, 1e-4);
        assert_eq!(r.failures, vec![0]);
    }

    #[test]
    fn relative_error_uses_floor_for_zeros() {
        assert_eq!(relative_error(0.0, 0.0, 1e-6), 0.0);
        assert!((relative_error(0.0, 1e-12, 1e-6) - 1e-6).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
    }
}
