//! Photon-density reconstructions from equi-depth boundaries and
//! time-of-flight estimators.
//!
//! Estimators return positions in bin units on `[0, bins]`; convert to
//! meters with [`bin_to_distance`].

use crate::error::{Error, Result};
use crate::histogram::{EdhBoundaries, EwHistogram};
use crate::transient::SimConfig;

/// Number of grid points the linearly interpolated density is sampled on.
pub const DENSITY_GRID: usize = 1024;

/// Piecewise-constant local photon density.
///
/// Each piece holds `weight` equi-depth bins over `[left, right)`; its density
/// is `weight / (right - left)`. Zero-width bins are folded into the next
/// piece (or the previous one at the end of the range), so the total mass is
/// always `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseDensity {
    pub edges: Vec<f64>,
    pub weights: Vec<u32>,
}

impl PiecewiseDensity {
    pub fn pieces(&self) -> usize {
        self.weights.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    pub fn density(&self, i: usize) -> f64 {
        self.weights[i] as f64 / self.width(i)
    }

    pub fn densities(&self) -> Vec<f64> {
        (0..self.pieces()).map(|i| self.density(i)).collect()
    }

    pub fn mass(&self) -> f64 {
        (0..self.pieces())
            .map(|i| self.width(i) * self.density(i))
            .sum()
    }

    /// Density at `t`; pieces are closed on the left.
    pub fn eval(&self, t: f64) -> f64 {
        let i = self
            .edges
            .partition_point(|&e| e <= t)
            .clamp(1, self.pieces())
            - 1;
        self.density(i)
    }
}

/// Piecewise-constant density `1 / (t_j - t_{j-1})` of each equi-depth bin.
pub fn rho0(bounds: &EdhBoundaries) -> PiecewiseDensity {
    let b = bounds.as_slice();
    let mut edges = vec![b[0]];
    let mut weights: Vec<u32> = Vec::with_capacity(b.len() - 1);
    let mut pending = 0u32;
    for w in b.windows(2) {
        pending += 1;
        if w[1] > w[0] {
            edges.push(w[1]);
            weights.push(pending);
            pending = 0;
        }
    }
    if pending > 0 {
        match weights.last_mut() {
            Some(last) => *last += pending,
            // every bound coincides: nothing meaningful to report
            None => {
                edges.push(b[0]);
                weights.push(pending);
            }
        }
    }
    PiecewiseDensity { edges, weights }
}

/// Midpoint of the narrowest equi-depth bin (first one on ties). A
/// zero-width bin is the narrowest possible and yields its position.
pub fn t0_hat(bounds: &EdhBoundaries) -> f64 {
    let b = bounds.as_slice();
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for (j, w) in b.windows(2).enumerate() {
        let width = w[1] - w[0];
        if width < best_width {
            best = j;
            best_width = width;
        }
    }
    0.5 * (b[best] + b[best + 1])
}

/// Where the interpolation knot of each piece sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KnotPlacement {
    #[default]
    Midpoint,
    LeftEdge,
}

impl std::str::FromStr for KnotPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midpoint" => Ok(KnotPlacement::Midpoint),
            "left_edge" | "left" => Ok(KnotPlacement::LeftEdge),
            other => Err(Error::InvalidConfig(format!(
                "unknown knot placement {other}"
            ))),
        }
    }
}

/// Linearly interpolated density sampled at `i * bins / 1024`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub bins: f64,
    pub values: Vec<f64>,
    pub source_bounds: EdhBoundaries,
}

impl DensityEstimate {
    pub fn grid_position(&self, i: usize) -> f64 {
        i as f64 * self.bins / self.values.len() as f64
    }
}

/// Interpolates the `(knot, density)` pairs of [`rho0`] linearly between
/// knots, constant beyond the first and last knot.
pub fn rho1(bounds: &EdhBoundaries, placement: KnotPlacement) -> DensityEstimate {
    let pieces = rho0(bounds);
    let knots: Vec<(f64, f64)> = (0..pieces.pieces())
        .filter(|&i| pieces.width(i) > 0.0)
        .map(|i| {
            let x = match placement {
                KnotPlacement::Midpoint => 0.5 * (pieces.edges[i] + pieces.edges[i + 1]),
                KnotPlacement::LeftEdge => pieces.edges[i],
            };
            (x, pieces.density(i))
        })
        .collect();
    let bins = bounds.bins();
    let values = (0..DENSITY_GRID)
        .map(|g| interpolate(&knots, g as f64 * bins / DENSITY_GRID as f64))
        .collect();
    DensityEstimate {
        bins,
        values,
        source_bounds: bounds.clone(),
    }
}

fn interpolate(knots: &[(f64, f64)], t: f64) -> f64 {
    let Some(&(x0, y0)) = knots.first() else {
        return 0.0;
    };
    if t <= x0 {
        return y0;
    }
    let (xn, yn) = knots[knots.len() - 1];
    if t >= xn {
        return yn;
    }
    let k = knots.partition_point(|&(x, _)| x <= t);
    let (xa, ya) = knots[k - 1];
    let (xb, yb) = knots[k];
    ya + (yb - ya) * (t - xa) / (xb - xa)
}

/// Grid position of the maximum of `density` (first one on ties).
pub fn t1_hat(density: &DensityEstimate) -> f64 {
    density.grid_position(argmax_first(&density.values))
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Center of the fullest equal-width bin (first one on ties).
pub fn ewh_peak(hist: &EwHistogram) -> Result<f64> {
    let counts = hist.counts();
    if counts.is_empty() || hist.total() == 0 {
        return Err(Error::EmptyHistogram);
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    Ok((best as f64 + 0.5) * hist.bin_width())
}

/// Converts a round-trip time in bins to a distance, `z = c * t * dt / 2`.
pub fn bin_to_distance(t: f64, cfg: &SimConfig) -> Result<f64> {
    let bins = cfg.bins as f64;
    if !(0.0..=bins).contains(&t) {
        return Err(Error::OutOfRange { position: t, bins });
    }
    Ok(cfg.c * t * cfg.bin_width() / 2.0)
}

/// Which estimator produced a distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    T0,
    T1,
    EwhPeak,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::T0 => "t0",
            EstimatorKind::T1 => "t1",
            EstimatorKind::EwhPeak => "ewh_peak",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t0" => Ok(EstimatorKind::T0),
            "t1" => Ok(EstimatorKind::T1),
            "ewh_peak" => Ok(EstimatorKind::EwhPeak),
            other => Err(Error::InvalidConfig(format!("unknown estimator {other}"))),
        }
    }
}

/// Estimated distances in meters for a whole image.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    pub width: usize,
    pub height: usize,
    pub distances: Vec<f64>,
    pub estimator: EstimatorKind,
}
