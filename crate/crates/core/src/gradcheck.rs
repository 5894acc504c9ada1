//! Central finite-difference checks for reverse-mode gradients.

use alloc::format;
use alloc::string::String;


use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub step: f64,
    /// Relative error at or above which a coordinate fails.
    pub tolerance: f64,
    /// Coordinates whose one-sided differences disagree by more than this
    /// (relative) sit on a kink and are skipped.
    pub kink_tolerance: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, kink_tolerance: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub label: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    /// Coordinate with the largest error.
    pub worst_index: Option<usize>,
}

impl FdReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance && self.checked > 0
    }
}

/// `|a - c| / max(|a|, 1e-8)` with `a` the analytic value.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1e-8)
}

/// Compares `analytic` with central differences of `f` around `x`.
pub fn finite_difference_check(
    label: &str,
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    config: &FdConfig,
) -> Result<FdReport> {
    let h = config.step;
    let f0 = f(x)?;
    let mut xs = x.to_vec();
    let mut report = FdReport { label: label.into(), max_rel_error: 0.0, checked: 0, skipped_kinks: 0, worst_index: None };
    for i in 0..x.len() {
        xs[i] = x[i] + h;
        let fp = f(&xs)?;
        xs[i] = x[i] - h;
        let fm = f(&xs)?;
        xs[i] = x[i];
        let fwd = (fp - f0) / h;
        let bwd = (f0 - fm) / h;
        let scale = 1.0f64.max(fwd.abs()).max(bwd.abs());
        if (fwd - bwd).abs() > config.kink_tolerance * scale {
            report.skipped_kinks += 1;
            continue;
        }
        let central = (fp - fm) / (2.0 * h);
        let err = relative_error(analytic[i], central);
        report.checked += 1;
        if report.worst_index.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}

/// Worst report of a list (by relative error).
pub fn worst(reports: &[FdReport]) -> Option<&FdReport> {
    reports.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
}

/// Human-readable one-line summary.
pub fn describe(r: &FdReport) -> String {
    format!(
        "{}: max rel err {:.3e} over {} coords ({} kinks skipped)",
        r.label, r.max_rel_error, r.checked, r.skipped_kinks
    )
}

pub mod suite;
