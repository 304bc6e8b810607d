//! Central finite-difference verification of analytic gradients.

use super::tape::KinkPattern;
use super::tensor::Tensor;

/// One evaluation of a function under test. `pattern` identifies the smooth
/// piece the point lies on; a coordinate whose perturbed evaluations change
/// the pattern straddles a kink and is skipped.
#[derive(Clone, Debug)]
pub struct Probe {
    pub value: f64,
    pub pattern: Option<KinkPattern>,
}

impl From<f64> for Probe {
    fn from(value: f64) -> Self {
        Self { value, pattern: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FdReport {
    /// max over checked coordinates of `|analytic - fd| / max(1, |fd|)`.
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares `analytic` against central differences of `f` at `point`.
pub fn finite_difference_check<F, P>(mut f: F, point: &Tensor, analytic: &Tensor, eps: f64) -> FdReport
where
    F: FnMut(&Tensor) -> P,
    P: Into<Probe>,
{
    assert!(eps > 0.0, "eps must be positive");
    assert_eq!(point.shape(), analytic.shape());
    let base = f(point).into();
    let mut report = FdReport::default();
    let mut x = point.clone();
    for i in 0..point.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let plus = f(&x).into();
        x.data_mut()[i] = orig - eps;
        let minus = f(&x).into();
        x.data_mut()[i] = orig;
        if plus.pattern != base.pattern || minus.pattern != base.pattern {
            report.skipped += 1;
            continue;
        }
        let fd = (plus.value - minus.value) / (2.0 * eps);
        let err = if fd.is_finite() {
            (analytic.data()[i] - fd).abs() / fd.abs().max(1.0)
        } else {
            f64::INFINITY
        };
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    report
}
