//! Distance-map and boundary-set error metrics. Distances are reported in
//! centimeters, boundaries in bins.

use std::fmt;

use crate::error::{Error, Result};
use crate::histogram::EdhBoundaries;

/// Reference quantity for the p% inlier threshold.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InlierMode {
    /// `|error| <= p% of the unambiguous range`.
    #[default]
    Range,
    /// `|error| <= p% of the true depth`.
    Relative,
}

impl std::str::FromStr for InlierMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "range" => Ok(InlierMode::Range),
            "relative" => Ok(InlierMode::Relative),
            other => Err(Error::InvalidConfig(format!("unknown inlier mode {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rmse_cm: f64,
    pub mae_cm: f64,
    /// `(p, percentage of pixels within the p% threshold)`.
    pub inlier_pct: Vec<(f64, f64)>,
    pub boundary_rmse_bins: Option<f64>,
    pub n_pixels: usize,
}

impl MetricsReport {
    pub fn inliers(&self, p: f64) -> Option<f64> {
        self.inlier_pct
            .iter()
            .find(|(q, _)| *q == p)
            .map(|(_, v)| *v)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18}{:>12}", "pixels", self.n_pixels)?;
        writeln!(f, "{:<18}{:>12.3}", "RMSE (cm)", self.rmse_cm)?;
        writeln!(f, "{:<18}{:>12.3}", "MAE (cm)", self.mae_cm)?;
        for (p, v) in &self.inlier_pct {
            writeln!(f, "{:<18}{:>12.2}", format!("{p}% inliers (%)"), v)?;
        }
        if let Some(b) = self.boundary_rmse_bins {
            writeln!(f, "{:<18}{:>12.3}", "boundary RMSE", b)?;
        }
        Ok(())
    }
}

/// Running sums for distance metrics, mergeable across pixels and seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceAccumulator {
    pub thresholds: Vec<f64>,
    pub n: usize,
    pub sum_sq_m: f64,
    pub sum_abs_m: f64,
    pub inlier_counts: Vec<usize>,
}

impl DistanceAccumulator {
    pub fn new(thresholds: &[f64]) -> Self {
        DistanceAccumulator {
            thresholds: thresholds.to_vec(),
            n: 0,
            sum_sq_m: 0.0,
            sum_abs_m: 0.0,
            inlier_counts: vec![0; thresholds.len()],
        }
    }

    pub fn push(&mut self, estimate: f64, truth: f64, mode: InlierMode, z_max: f64) {
        let err = (estimate - truth).abs();
        self.n += 1;
        self.sum_sq_m += err * err;
        self.sum_abs_m += err;
        for (count, p) in self.inlier_counts.iter_mut().zip(&self.thresholds) {
            let reference = match mode {
                InlierMode::Range => z_max,
                InlierMode::Relative => truth,
            };
            if err <= p / 100.0 * reference {
                *count += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &DistanceAccumulator) {
        self.n += other.n;
        self.sum_sq_m += other.sum_sq_m;
        self.sum_abs_m += other.sum_abs_m;
        for (a, b) in self.inlier_counts.iter_mut().zip(&other.inlier_counts) {
            *a += b;
        }
    }

    pub fn report(&self) -> MetricsReport {
        let n = self.n.max(1) as f64;
        MetricsReport {
            rmse_cm: 100.0 * (self.sum_sq_m / n).sqrt(),
            mae_cm: 100.0 * self.sum_abs_m / n,
            inlier_pct: self
                .thresholds
                .iter()
                .zip(&self.inlier_counts)
                .map(|(&p, &c)| (p, 100.0 * c as f64 / n))
                .collect(),
            boundary_rmse_bins: None,
            n_pixels: self.n,
        }
    }
}

/// RMSE, MAE and p% inliers of estimated distances against ground truth
/// (both in meters).
pub fn distance_metrics(
    estimate: &[f64],
    truth: &[f64],
    thresholds: &[f64],
    mode: InlierMode,
    z_max: f64,
) -> Result<MetricsReport> {
    if estimate.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates for {} ground-truth pixels",
            estimate.len(),
            truth.len()
        )));
    }
    let mut acc = DistanceAccumulator::new(thresholds);
    for (&e, &t) in estimate.iter().zip(truth) {
        acc.push(e, t, mode, z_max);
    }
    Ok(acc.report())
}

/// Root-mean-square distance between interior boundaries.
pub fn boundary_rmse(estimate: &EdhBoundaries, oracle: &EdhBoundaries) -> Result<f64> {
    Ok((boundary_sq_sum(estimate, oracle)? / (estimate.q().max(2) - 1) as f64).sqrt())
}

/// Sum of squared interior boundary differences.
pub fn boundary_sq_sum(estimate: &EdhBoundaries, oracle: &EdhBoundaries) -> Result<f64> {
    if estimate.q() != oracle.q() {
        return Err(Error::QMismatch(estimate.q(), oracle.q()));
    }
    Ok(estimate
        .interior()
        .iter()
        .zip(oracle.interior())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}
