//! Central finite-difference verification of analytic gradients.

use std::fmt;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }

    /// Merges another report, keeping the worst coordinate.
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst_index = other.worst_index;
            self.worst_analytic = other.worst_analytic;
            self.worst_numeric = other.worst_numeric;
        }
    }

    pub fn empty(tol: f64) -> Self {
        Self {
            checked: 0,
            max_rel_err: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            tol,
        }
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} coords, max rel err {:.3e} at #{} (analytic {:.6e}, numeric {:.6e}), tol {:.0e}: {}",
            self.checked,
            self.max_rel_err,
            self.worst_index,
            self.worst_analytic,
            self.worst_numeric,
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Finite-difference rule used by [`compare_with_stencil`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`.
    #[default]
    Central,
    /// Richardson combination of the central rule at `h` and `2h`:
    /// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`. Truncation error
    /// falls to `O(h⁴)`, so a larger `h` can be used and rounding noise in
    /// `f` is divided by a larger step.
    Central4,
}

/// Compares `analytic` with central differences of `f` around `x`, one
/// coordinate at a time.
pub fn compare_with_central_differences<F>(
    f: F,
    x: &[f64],
    analytic: &[f64],
    eps: f64,
    tol: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    compare_with_stencil(f, x, analytic, eps, tol, Stencil::Central)
}

pub fn compare_with_stencil<F>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    eps: f64,
    tol: f64,
    stencil: Stencil,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let mut report = GradCheckReport::empty(tol);
    let mut probe = x.to_vec();
    let mut diff = |probe: &mut Vec<f64>, i: usize, h: f64| {
        probe[i] = x[i] + h;
        let fp = f(probe);
        probe[i] = x[i] - h;
        let fm = f(probe);
        probe[i] = x[i];
        fp - fm
    };
    for i in 0..x.len() {
        let numeric = match stencil {
            Stencil::Central => diff(&mut probe, i, eps) / (2.0 * eps),
            Stencil::Central4 => {
                let near = diff(&mut probe, i, eps);
                let far = diff(&mut probe, i, 2.0 * eps);
                (8.0 * near - far) / (12.0 * eps)
            }
        };
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if report.checked == 1 || err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    report
}

/// Checks a function that returns its value together with its analytic
/// gradient.
pub fn grad_check<F>(mut f: F, x: &[f64], eps: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(x);
    compare_with_central_differences(|p| f(p).0, x, &analytic, eps, tol)
}
