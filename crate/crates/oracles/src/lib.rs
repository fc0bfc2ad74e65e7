//! Independent oracle checks for the signal-processing, gradient and metric
//! code, shared by the per-area tests and the acceptance run. Each check
//! reports a measured value against a pinned tolerance.

pub mod distortion_checks;
pub mod dsp_checks;
pub mod grad;
pub mod metric_checks;

use std::fmt;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    /// Measured error or statistic.
    pub value: f64,
    /// Pass when `value < bound` (or `<=` with `inclusive`).
    pub bound: f64,
    pub inclusive: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound,
            inclusive: false,
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound,
            inclusive: true,
        }
    }

    /// Boolean condition recorded as 0 (holds) or 1 (fails).
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Check::at_most(name, if ok { 0.0 } else { 1.0 }, 0.0)
    }

    pub fn pass(&self) -> bool {
        if self.inclusive {
            self.value <= self.bound
        } else {
            self.value < self.bound
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:.3e} {} {:.1e}",
            self.name,
            self.value,
            if self.inclusive { "<=" } else { "<" },
            self.bound
        )
    }
}

pub fn assert_all(checks: &[Check]) {
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass()).map(|c| c.to_string()).collect();
    assert!(failed.is_empty(), "failed checks:\n{}", failed.join("\n"));
}

/// Norm-wise relative error `|a - b| / max(|a| + |b|, 1e-8)`. The floor
/// keeps identically-zero gradients from turning rounding noise into a
/// relative error of one.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
