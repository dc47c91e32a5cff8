//! Monte-Carlo experiment orchestration.
//!
//! Every pixel of every Monte-Carlo run gets its own generator seeded from
//! `(global_seed, level index, run index, pixel index)`, and every method
//! consumes that pixel's single stream, so method comparisons are paired and
//! results do not depend on scheduling. Output rows are written in a fixed
//! order (levels, method, estimator, depth group).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::binner::{track, BinnerState, StepParams, Stepping};
use crate::config::{ExperimentConfig, ExperimentMode, GroupBy, Method};
use crate::error::{Error, Result};
use crate::estimator::{bin_to_distance, ewh_peak, rho1, t0_hat, t1_hat, EstimatorKind};
use crate::histogram::{ewh, hedh, oedh, pedh, EdhBoundaries, EwHistogram};
use crate::metrics::{boundary_sq_sum, DistanceAccumulator, MetricsReport};
use crate::scene::{DepthMap, PhotonLevels, PixelConfig, Scene};
use crate::tensor::{Tensor, FEATURE_MAGIC};
use crate::transient::{derive_seed, sample_stream, PhotonStream, Transient};

pub const SCHEMA_VERSION: u32 = 1;

/// Seed of one pixel's stream.
pub fn pixel_seed(global: u64, level_index: usize, run: usize, pixel: usize) -> u64 {
    let s = derive_seed(global, level_index as u64);
    let s = derive_seed(s, run as u64);
    derive_seed(s, pixel as u64)
}

/// What one method produced for one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutput {
    pub method: Method,
    pub bounds: Option<EdhBoundaries>,
    pub hist: Option<EwHistogram>,
    /// Squared interior-boundary error against the oracle of the same stream.
    pub boundary_sq: Option<f64>,
    /// Distance in meters per requested estimator.
    pub distances: Vec<(EstimatorKind, std::result::Result<f64, String>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelOutcome {
    pub seed: u64,
    pub stream_checksum: u64,
    pub total_photons: usize,
    pub truth: f64,
    pub outputs: Vec<std::result::Result<MethodOutput, String>>,
}

impl PixelOutcome {
    pub fn output(&self, method: Method) -> Option<&std::result::Result<MethodOutput, String>> {
        self.outputs.iter().find(|o| match o {
            Ok(m) => m.method == method,
            Err(_) => false,
        })
    }
}

/// Samples one stream for `pixel` and runs every method on it.
pub fn run_pixel_pipeline(
    pixel: &PixelConfig,
    cfg: &ExperimentConfig,
    methods: &[Method],
    estimators: &[EstimatorKind],
    seed: u64,
) -> Result<PixelOutcome> {
    let transient = Transient::build(pixel, &cfg.sim)?;
    let stream = sample_stream(&transient, cfg.sim.cycles, seed)?;
    let outputs = run_methods(&stream, cfg, methods, estimators);
    Ok(PixelOutcome {
        seed,
        stream_checksum: stream.checksum(),
        total_photons: stream.total_photons(),
        truth: pixel.z,
        outputs,
    })
}

/// Runs `methods` on an existing stream.
pub fn run_methods(
    stream: &PhotonStream,
    cfg: &ExperimentConfig,
    methods: &[Method],
    estimators: &[EstimatorKind],
) -> Vec<std::result::Result<MethodOutput, String>> {
    let oracle = if methods.iter().any(|m| m.is_equi_depth()) {
        Some(oedh(stream, cfg.q))
    } else {
        None
    };
    methods
        .iter()
        .map(|&method| run_method(stream, cfg, method, estimators, oracle.as_ref()))
        .collect()
}

fn run_method(
    stream: &PhotonStream,
    cfg: &ExperimentConfig,
    method: Method,
    estimators: &[EstimatorKind],
    oracle: Option<&Result<EdhBoundaries>>,
) -> std::result::Result<MethodOutput, String> {
    let to_m = |t: f64| bin_to_distance(t, &cfg.sim).map_err(|e| e.to_string());
    if let Some(bins) = method.ew_bins() {
        let hist = ewh(stream, bins).map_err(|e| e.to_string())?;
        let distances = estimators
            .iter()
            .filter(|e| method.supports(**e))
            .map(|&e| (e, ewh_peak(&hist).map_err(|e| e.to_string()).and_then(to_m)))
            .collect();
        return Ok(MethodOutput {
            method,
            bounds: None,
            hist: Some(hist),
            boundary_sq: None,
            distances,
        });
    }
    let bounds = match method {
        Method::Oedh => match oracle {
            Some(Ok(b)) => Ok(b.clone()),
            Some(Err(e)) => Err(e.to_string()),
            None => oedh(stream, cfg.q).map_err(|e| e.to_string()),
        },
        Method::Pedh => pedh(stream, cfg.q, &cfg.step).map_err(|e| e.to_string()),
        Method::Hedh => hedh(stream, cfg.q, cfg.fixed_step).map_err(|e| e.to_string()),
        Method::Ewh32 | Method::Ewh1024 => unreachable!(),
    }?;
    let boundary_sq = match oracle {
        Some(Ok(o)) => boundary_sq_sum(&bounds, o).ok(),
        _ => None,
    };
    let distances = estimators
        .iter()
        .filter(|e| method.supports(**e))
        .map(|&e| {
            let t = match e {
                EstimatorKind::T0 => t0_hat(&bounds),
                EstimatorKind::T1 => t1_hat(&rho1(&bounds, cfg.knots)),
                EstimatorKind::EwhPeak => unreachable!(),
            };
            (e, to_m(t))
        })
        .collect();
    Ok(MethodOutput {
        method,
        bounds: Some(bounds),
        hist: None,
        boundary_sq,
        distances,
    })
}

/// Key of one output row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionKey {
    pub level_index: usize,
    pub levels: PhotonLevels,
    /// Method name (`oedh`, ..., or `fixed_median` / `optimized_median`).
    pub method: String,
    /// Estimator name, or `boundary` for boundary-only rows.
    pub estimator: String,
    /// Ground-truth depth when grouping by depth.
    pub depth: Option<f64>,
}

/// Mergeable statistics of one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub distance: DistanceAccumulator,
    pub boundary_sq: f64,
    pub boundary_n: usize,
}

impl Aggregate {
    fn new(thresholds: &[f64]) -> Self {
        Aggregate {
            distance: DistanceAccumulator::new(thresholds),
            boundary_sq: 0.0,
            boundary_n: 0,
        }
    }

    fn merge(&mut self, other: &Aggregate) {
        self.distance.merge(&other.distance);
        self.boundary_sq += other.boundary_sq;
        self.boundary_n += other.boundary_n;
    }

    pub fn boundary_rmse(&self) -> Option<f64> {
        (self.boundary_n > 0).then(|| (self.boundary_sq / self.boundary_n as f64).sqrt())
    }

    pub fn report(&self) -> MetricsReport {
        let mut r = self.distance.report();
        r.boundary_rmse_bins = self.boundary_rmse();
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRow {
    pub key: ConditionKey,
    /// Monte-Carlo run index for per-seed rows.
    pub run: Option<usize>,
    pub result: std::result::Result<Aggregate, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub summary: Vec<ConditionRow>,
    pub per_seed: Vec<ConditionRow>,
    pub thresholds: Vec<f64>,
}

impl ExperimentReport {
    pub fn failed(&self) -> usize {
        self.summary.iter().filter(|r| r.result.is_err()).count()
    }

    pub fn find(&self, levels: usize, method: &str, estimator: &str) -> Option<&ConditionRow> {
        self.summary.iter().find(|r| {
            r.key.level_index == levels
                && r.key.method == method
                && r.key.estimator == estimator
                && r.key.depth.is_none()
        })
    }

    pub fn summary_csv(&self) -> String {
        rows_csv(&self.summary, &self.thresholds, false)
    }

    pub fn per_seed_csv(&self) -> String {
        rows_csv(&self.per_seed, &self.thresholds, true)
    }

    /// Human-readable table of the summary rows.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = write!(
            out,
            "{:<10}{:<18}{:<10}{:>8}{:>8}{:>10}{:>10}",
            "sig:bkg", "method", "est", "depth", "pixels", "RMSE cm", "MAE cm"
        );
        for p in &self.thresholds {
            let _ = write!(out, "{:>9}", format!("{p}%in"));
        }
        let _ = writeln!(out, "{:>10}", "bnd RMSE");
        for row in &self.summary {
            let k = &row.key;
            let depth = k.depth.map_or("-".to_string(), |d| format!("{d:.3}"));
            let _ = write!(
                out,
                "{:<10}{:<18}{:<10}{:>8}",
                k.levels.to_string(),
                k.method,
                k.estimator,
                depth
            );
            match &row.result {
                Ok(agg) => {
                    let r = agg.report();
                    if r.n_pixels > 0 {
                        let _ = write!(
                            out,
                            "{:>8}{:>10.3}{:>10.3}",
                            r.n_pixels, r.rmse_cm, r.mae_cm
                        );
                        for (_, v) in &r.inlier_pct {
                            let _ = write!(out, "{v:>9.2}");
                        }
                    } else {
                        let _ = write!(out, "{:>8}{:>10}{:>10}", agg.boundary_n, "-", "-");
                        for _ in &self.thresholds {
                            let _ = write!(out, "{:>9}", "-");
                        }
                    }
                    match r.boundary_rmse_bins {
                        Some(b) => {
                            let _ = writeln!(out, "{b:>10.3}");
                        }
                        None => {
                            let _ = writeln!(out, "{:>10}", "-");
                        }
                    }
                }
                Err(e) => {
                    let _ = writeln!(out, "  ERROR: {e}");
                }
            }
        }
        out
    }

    /// Writes `summary.csv` and `per_seed.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let summary = dir.join("summary.csv");
        let per_seed = dir.join("per_seed.csv");
        fs::write(&summary, self.summary_csv())?;
        fs::write(&per_seed, self.per_seed_csv())?;
        Ok(vec![summary, per_seed])
    }
}

fn csv_field(s: &str) -> String {
    s.replace([',', '\n'], ";")
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn rows_csv(rows: &[ConditionRow], thresholds: &[f64], per_seed: bool) -> String {
    let mut out = String::new();
    out.push_str("schema_version,sig,bkg,method,estimator,depth_m");
    if per_seed {
        out.push_str(",run");
    }
    out.push_str(",n_pixels,rmse_cm,mae_cm");
    for p in thresholds {
        let _ = write!(out, ",inlier_{p}");
    }
    out.push_str(",boundary_rmse_bins,n_sq,sum_sq_m,sum_abs_m");
    for p in thresholds {
        let _ = write!(out, ",inlier_count_{p}");
    }
    out.push_str(",boundary_n,boundary_sq,error\n");
    for row in rows {
        let k = &row.key;
        let _ = write!(
            out,
            "{SCHEMA_VERSION},{},{},{},{},{}",
            k.levels.sig,
            k.levels.bkg,
            k.method,
            k.estimator,
            opt_num(k.depth)
        );
        if per_seed {
            let _ = write!(out, ",{}", row.run.map_or(String::new(), |r| r.to_string()));
        }
        match &row.result {
            Ok(agg) => {
                let r = agg.report();
                let has_distance = agg.distance.n > 0;
                let dist = |v: f64| {
                    if has_distance {
                        v.to_string()
                    } else {
                        String::new()
                    }
                };
                let _ = write!(
                    out,
                    ",{},{},{}",
                    r.n_pixels,
                    dist(r.rmse_cm),
                    dist(r.mae_cm)
                );
                for (_, v) in &r.inlier_pct {
                    let _ = write!(out, ",{}", dist(*v));
                }
                let d = &agg.distance;
                let _ = write!(
                    out,
                    ",{},{},{},{}",
                    opt_num(r.boundary_rmse_bins),
                    d.n,
                    d.sum_sq_m,
                    d.sum_abs_m
                );
                for c in &d.inlier_counts {
                    let _ = write!(out, ",{c}");
                }
                let _ = writeln!(out, ",{},{},", agg.boundary_n, agg.boundary_sq);
            }
            Err(e) => {
                let empty = 3 + thresholds.len() + 4 + thresholds.len() + 2;
                out.push_str(&",".repeat(empty));
                let _ = writeln!(out, ",{}", csv_field(e));
            }
        }
    }
    out
}

/// Rebuilds summary rows from per-seed rows by merging runs in order.
pub fn reaggregate(per_seed: &[ConditionRow]) -> Vec<ConditionRow> {
    let mut out: Vec<ConditionRow> = Vec::new();
    for row in per_seed {
        match out.iter_mut().find(|r| r.key == row.key) {
            Some(existing) => match (&mut existing.result, &row.result) {
                (Ok(a), Ok(b)) => a.merge(b),
                (Ok(_), Err(e)) => existing.result = Err(e.clone()),
                (Err(_), _) => {}
            },
            None => out.push(ConditionRow {
                key: row.key.clone(),
                run: None,
                result: row.result.clone(),
            }),
        }
    }
    out
}

/// Loads the scene geometry named by the configuration.
pub fn config_depth_map(cfg: &ExperimentConfig) -> Result<DepthMap> {
    cfg.scene.depth_map(&cfg.sim)
}

fn depth_groups(cfg: &ExperimentConfig, depth_map: &DepthMap) -> Vec<Option<f64>> {
    match cfg.group_by {
        GroupBy::All => vec![None],
        GroupBy::Depth => {
            let mut d: Vec<f64> = depth_map.depths().to_vec();
            d.sort_by(f64::total_cmp);
            d.dedup();
            d.into_iter().map(Some).collect()
        }
    }
}

fn group_index(groups: &[Option<f64>], truth: f64) -> usize {
    groups
        .iter()
        .position(|g| g.is_none_or(|d| d == truth))
        .unwrap_or(0)
}

/// Per-condition metrics aggregated over all Monte-Carlo runs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    match cfg.mode {
        ExperimentMode::Table => run_table(cfg),
        ExperimentMode::MedianTracking => run_median_tracking(cfg),
    }
}

type Slot = std::result::Result<Aggregate, String>;

fn merge_slot(slot: &mut Slot, other: Slot) {
    match (slot.as_mut(), other) {
        (Ok(a), Ok(b)) => a.merge(&b),
        (Ok(_), Err(e)) => *slot = Err(e),
        (Err(_), _) => {}
    }
}

fn run_table(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let depth_map = config_depth_map(cfg)?;
    let groups = depth_groups(cfg, &depth_map);
    let combos: Vec<(Method, EstimatorKind)> = cfg
        .methods
        .iter()
        .flat_map(|&m| {
            cfg.estimators
                .iter()
                .filter(move |e| m.supports(**e))
                .map(move |&e| (m, e))
        })
        .collect();
    let mut summary = Vec::new();
    let mut per_seed = Vec::new();
    for (li, &levels) in cfg.photon_levels.iter().enumerate() {
        let scene = Scene::new(
            depth_map.clone(),
            crate::scene::PixelLevels::Uniform(levels),
        )?;
        let mut totals: Vec<Vec<Slot>> =
            vec![vec![Ok(Aggregate::new(&cfg.inlier_thresholds)); groups.len()]; combos.len()];
        let mut runs: Vec<Vec<Vec<Slot>>> = Vec::with_capacity(cfg.n_monte_carlo);
        for run in 0..cfg.n_monte_carlo {
            let outcomes: Vec<Result<PixelOutcome>> = (0..scene.len())
                .into_par_iter()
                .map(|i| {
                    let pixel = scene.pixel(i)?;
                    run_pixel_pipeline(
                        &pixel,
                        cfg,
                        &cfg.methods,
                        &cfg.estimators,
                        pixel_seed(cfg.global_seed, li, run, i),
                    )
                })
                .collect();
            let mut slots: Vec<Vec<Slot>> =
                vec![vec![Ok(Aggregate::new(&cfg.inlier_thresholds)); groups.len()]; combos.len()];
            for outcome in outcomes {
                for (ci, &(method, estimator)) in combos.iter().enumerate() {
                    let (gi, contribution) = match &outcome {
                        Err(e) => (0, Err(e.to_string())),
                        Ok(o) => (
                            group_index(&groups, o.truth),
                            contribution(o, method, estimator, cfg),
                        ),
                    };
                    if outcome.is_err() {
                        for slot in slots[ci].iter_mut() {
                            merge_slot(slot, contribution.clone());
                        }
                    } else {
                        merge_slot(&mut slots[ci][gi], contribution);
                    }
                }
            }
            for (ci, row) in slots.iter().enumerate() {
                for (gi, slot) in row.iter().enumerate() {
                    merge_slot(&mut totals[ci][gi], slot.clone());
                }
            }
            runs.push(slots);
        }
        for (ci, &(method, estimator)) in combos.iter().enumerate() {
            for (gi, group) in groups.iter().enumerate() {
                let key = ConditionKey {
                    level_index: li,
                    levels,
                    method: method.name().into(),
                    estimator: estimator.name().into(),
                    depth: *group,
                };
                for (run, slots) in runs.iter().enumerate() {
                    per_seed.push(ConditionRow {
                        key: key.clone(),
                        run: Some(run),
                        result: slots[ci][gi].clone(),
                    });
                }
                summary.push(ConditionRow {
                    key,
                    run: None,
                    result: totals[ci][gi].clone(),
                });
            }
        }
    }
    Ok(ExperimentReport {
        summary,
        per_seed,
        thresholds: cfg.inlier_thresholds.clone(),
    })
}

fn contribution(
    outcome: &PixelOutcome,
    method: Method,
    estimator: EstimatorKind,
    cfg: &ExperimentConfig,
) -> Slot {
    let output = match outcome.output(method) {
        Some(Ok(o)) => o,
        _ => {
            let err = outcome
                .outputs
                .iter()
                .zip(&cfg.methods)
                .find(|(_, m)| **m == method)
                .and_then(|(o, _)| o.as_ref().err().cloned())
                .unwrap_or_else(|| format!("{method} did not run"));
            return Err(err);
        }
    };
    let mut agg = Aggregate::new(&cfg.inlier_thresholds);
    let distance = output
        .distances
        .iter()
        .find(|(e, _)| *e == estimator)
        .map(|(_, d)| d.clone())
        .unwrap_or_else(|| Err(format!("{estimator} not computed")))?;
    agg.distance
        .push(distance, outcome.truth, cfg.inlier_mode, cfg.sim.z_max());
    if let Some(sq) = output.boundary_sq {
        agg.boundary_sq = sq;
        agg.boundary_n = cfg.q - 1;
    }
    Ok(agg)
}

/// Final CVs of a fixed-step and an optimized median binner on one stream.
pub fn median_pair(stream: &PhotonStream, fixed_step: f64, params: &StepParams) -> (f64, f64) {
    let bins = stream.bins();
    let fixed = track(
        BinnerState::new(0.5, bins, Stepping::Fixed { step: fixed_step }),
        stream,
    );
    let opt = track(
        BinnerState::new(0.5, bins, Stepping::Optimized(*params)),
        stream,
    );
    (fixed.cv, opt.cv)
}

fn run_median_tracking(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let depth_map = config_depth_map(cfg)?;
    let groups = depth_groups(cfg, &depth_map);
    let names = ["fixed_median", "optimized_median"];
    let mut summary = Vec::new();
    let mut per_seed = Vec::new();
    for (li, &levels) in cfg.photon_levels.iter().enumerate() {
        let scene = Scene::new(
            depth_map.clone(),
            crate::scene::PixelLevels::Uniform(levels),
        )?;
        let mut runs: Vec<[Vec<Slot>; 2]> = Vec::with_capacity(cfg.n_monte_carlo);
        for run in 0..cfg.n_monte_carlo {
            let outcomes: Vec<Result<(f64, f64, f64)>> = (0..scene.len())
                .into_par_iter()
                .map(|i| {
                    let pixel = scene.pixel(i)?;
                    let transient = Transient::build(&pixel, &cfg.sim)?;
                    let median = transient
                        .quantile(0.5)
                        .ok_or_else(|| Error::InvalidParams("empty transient".into()))?;
                    let stream = sample_stream(
                        &transient,
                        cfg.sim.cycles,
                        pixel_seed(cfg.global_seed, li, run, i),
                    )?;
                    let (f, o) = median_pair(&stream, cfg.fixed_step, &cfg.step);
                    Ok((pixel.z, f - median, o - median))
                })
                .collect();
            let mut slots: [Vec<Slot>; 2] = std::array::from_fn(|_| {
                vec![Ok(Aggregate::new(&cfg.inlier_thresholds)); groups.len()]
            });
            for outcome in outcomes {
                match outcome {
                    Ok((z, ef, eo)) => {
                        let gi = group_index(&groups, z);
                        for (s, err) in slots.iter_mut().zip([ef, eo]) {
                            let mut a = Aggregate::new(&cfg.inlier_thresholds);
                            a.boundary_sq = err * err;
                            a.boundary_n = 1;
                            merge_slot(&mut s[gi], Ok(a));
                        }
                    }
                    Err(e) => {
                        for s in slots.iter_mut() {
                            for slot in s.iter_mut() {
                                merge_slot(slot, Err(e.to_string()));
                            }
                        }
                    }
                }
            }
            runs.push(slots);
        }
        for (si, name) in names.iter().enumerate() {
            for (gi, group) in groups.iter().enumerate() {
                let key = ConditionKey {
                    level_index: li,
                    levels,
                    method: name.to_string(),
                    estimator: "boundary".into(),
                    depth: *group,
                };
                let mut total: Slot = Ok(Aggregate::new(&cfg.inlier_thresholds));
                for (run, slots) in runs.iter().enumerate() {
                    per_seed.push(ConditionRow {
                        key: key.clone(),
                        run: Some(run),
                        result: slots[si][gi].clone(),
                    });
                    merge_slot(&mut total, slots[si][gi].clone());
                }
                summary.push(ConditionRow {
                    key,
                    run: None,
                    result: total,
                });
            }
        }
    }
    Ok(ExperimentReport {
        summary,
        per_seed,
        thresholds: cfg.inlier_thresholds.clone(),
    })
}

/// Step parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    KPct,
    Gamma,
    Beta1,
    Beta2,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::KPct => "k_pct",
            SweepParam::Gamma => "gamma",
            SweepParam::Beta1 => "beta1",
            SweepParam::Beta2 => "beta2",
        }
    }

    fn apply(self, params: &mut StepParams, value: f64) {
        match self {
            SweepParam::KPct => params.k_pct = value,
            SweepParam::Gamma => params.gamma = value,
            SweepParam::Beta1 => params.beta1 = value,
            SweepParam::Beta2 => params.beta2 = value,
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k_pct" | "k" | "K" => Ok(SweepParam::KPct),
            "gamma" => Ok(SweepParam::Gamma),
            "beta1" => Ok(SweepParam::Beta1),
            "beta2" => Ok(SweepParam::Beta2),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep parameter {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    /// Values of the parameters that are not swept.
    pub fixed: StepParams,
}

impl SweepSpec {
    /// Settings used when tuning each parameter on its own: K with no
    /// smoothing or decay, gamma with K = 1 and no smoothing, beta2 with
    /// beta1 = 0.5, beta1 with beta2 = 0.8.
    pub fn standard(param: SweepParam, values: Vec<f64>) -> Self {
        let base = StepParams::default();
        let fixed = match param {
            SweepParam::KPct => StepParams::unsmoothed(1.0),
            SweepParam::Gamma => StepParams::unsmoothed(1.0),
            SweepParam::Beta2 => StepParams {
                k_pct: 1.0,
                beta1: 0.5,
                ..base
            },
            SweepParam::Beta1 => StepParams {
                k_pct: 1.0,
                beta2: 0.8,
                ..base
            },
        };
        SweepSpec {
            param,
            values,
            fixed,
        }
    }

    pub fn params_for(&self, value: f64) -> Result<StepParams> {
        let mut p = self.fixed;
        self.param.apply(&mut p, value);
        p.validate().map_err(|e| Error::InvalidSweepValue {
            param: self.param.name().into(),
            value,
            reason: e.to_string(),
        })?;
        Ok(p)
    }
}

/// Errors at one sweep value, averaged over photon levels.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub boundary_rmse: f64,
    pub distance_rmse_cm: f64,
    pub distance_mae_cm: f64,
}

/// Config for one sweep value: PEDH with the `t0` estimator.
pub fn sweep_config(
    spec: &SweepSpec,
    base: &ExperimentConfig,
    value: f64,
) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    cfg.step = spec.params_for(value)?;
    cfg.methods = vec![Method::Pedh];
    cfg.estimators = vec![EstimatorKind::T0];
    cfg.mode = ExperimentMode::Table;
    cfg.group_by = GroupBy::All;
    Ok(cfg)
}

/// Averages the PEDH/t0 summary rows of an experiment over photon levels.
pub fn sweep_point(value: f64, report: &ExperimentReport) -> Result<SweepPoint> {
    let rows: Vec<&ConditionRow> = report
        .summary
        .iter()
        .filter(|r| r.key.method == "pedh" && r.key.estimator == "t0")
        .collect();
    let mut b = 0.0;
    let mut rmse = 0.0;
    let mut mae = 0.0;
    for row in &rows {
        let agg = row
            .result
            .as_ref()
            .map_err(|e| Error::InvalidParams(format!("sweep condition failed: {e}")))?;
        let r = agg.report();
        b += r.boundary_rmse_bins.unwrap_or(f64::NAN);
        rmse += r.rmse_cm;
        mae += r.mae_cm;
    }
    let n = rows.len().max(1) as f64;
    Ok(SweepPoint {
        value,
        boundary_rmse: b / n,
        distance_rmse_cm: rmse / n,
        distance_mae_cm: mae / n,
    })
}

/// Varies one step parameter, runs PEDH at each value over the base
/// configuration's scene, photon levels and seeds, and reports errors
/// averaged over photon levels.
pub fn sweep(spec: &SweepSpec, base: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    // validate every value before spending time on any
    for &v in &spec.values {
        spec.params_for(v)?;
    }
    spec.values
        .iter()
        .map(|&v| {
            let cfg = sweep_config(spec, base, v)?;
            let report = run_experiment(&cfg)?;
            sweep_point(v, &report)
        })
        .collect()
}

pub fn sweep_csv(param: SweepParam, points: &[SweepPoint]) -> String {
    let mut out = String::from(
        "schema_version,param,value,boundary_rmse_bins,distance_rmse_cm,distance_mae_cm
",
    );
    for p in points {
        let _ = writeln!(
            out,
            "{SCHEMA_VERSION},{},{},{},{},{}",
            param.name(),
            p.value,
            p.boundary_rmse,
            p.distance_rmse_cm,
            p.distance_mae_cm
        );
    }
    out
}

/// Per-pixel PEDH density features of a scene.
pub fn density_features(scene: &Scene, cfg: &ExperimentConfig) -> Result<Tensor> {
    if !cfg.methods.contains(&Method::Pedh) {
        return Err(Error::InvalidConfig(
            "feature export needs pedh among the methods".into(),
        ));
    }
    let map = scene.depth_map();
    let rows: Vec<Result<Vec<f32>>> = (0..scene.len())
        .into_par_iter()
        .map(|i| {
            let pixel = scene.pixel(i)?;
            let transient = Transient::build(&pixel, &cfg.sim)?;
            let stream = sample_stream(
                &transient,
                cfg.sim.cycles,
                pixel_seed(cfg.global_seed, 0, 0, i),
            )?;
            let bounds = pedh(&stream, cfg.q, &cfg.step)?;
            Ok(rho1(&bounds, cfg.knots)
                .values
                .iter()
                .map(|&v| v as f32)
                .collect())
        })
        .collect();
    let mut data = Vec::with_capacity(scene.len() * crate::estimator::DENSITY_GRID);
    for r in rows {
        data.extend(r?);
    }
    Tensor::new(
        FEATURE_MAGIC,
        map.width(),
        map.height(),
        crate::estimator::DENSITY_GRID,
        data,
    )
}

/// Writes the feature tensor to `path` and the ground-truth depths to
/// `<path>.depth.csv`. Returns the sidecar path.
pub fn export_density_features(
    scene: &Scene,
    cfg: &ExperimentConfig,
    path: &Path,
) -> Result<PathBuf> {
    let tensor = density_features(scene, cfg)?;
    tensor.write(path)?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".depth.csv");
    let sidecar = PathBuf::from(sidecar);
    let mut buf = Vec::new();
    scene.depth_map().write_csv(&mut buf)?;
    fs::write(&sidecar, buf)?;
    Ok(sidecar)
}

/// Per-pixel boundary sets or histograms for a scene at one photon level
/// (first Monte-Carlo run).
pub fn scene_outputs(
    scene: &Scene,
    cfg: &ExperimentConfig,
    method: Method,
) -> Result<Vec<MethodOutput>> {
    let outcomes: Vec<Result<PixelOutcome>> = (0..scene.len())
        .into_par_iter()
        .map(|i| {
            run_pixel_pipeline(
                &scene.pixel(i)?,
                cfg,
                &[method],
                &cfg.estimators,
                pixel_seed(cfg.global_seed, 0, 0, i),
            )
        })
        .collect();
    outcomes
        .into_iter()
        .map(|o| {
            o?.outputs
                .pop()
                .expect("one method")
                .map_err(Error::InvalidParams)
        })
        .collect()
}

/// Summary keyed by (levels index, method, estimator) for quick lookups.
pub fn summary_map(report: &ExperimentReport) -> BTreeMap<(usize, String, String), MetricsReport> {
    report
        .summary
        .iter()
        .filter(|r| r.key.depth.is_none())
        .filter_map(|r| {
            r.result.as_ref().ok().map(|a| {
                (
                    (
                        r.key.level_index,
                        r.key.method.clone(),
                        r.key.estimator.clone(),
                    ),
                    a.report(),
                )
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SceneSpec;
    use crate::scene::SceneKind;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            scene: SceneSpec::Synthetic(SceneKind::staircase(3, 2.0, 12.0)),
            photon_levels: vec![PhotonLevels::new(1.0, 1.0)],
            n_monte_carlo: 2,
            sim: crate::transient::SimConfig {
                cycles: 4000,
                ..Default::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn methods_share_the_stream() {
        let cfg = small_cfg();
        let pixel = PixelConfig::new(7.5, 1.0, 1.0).unwrap();
        let seed = 99;
        let both = run_pixel_pipeline(
            &pixel,
            &cfg,
            &[Method::Oedh, Method::Pedh],
            &cfg.estimators,
            seed,
        )
        .unwrap();
        let alone =
            run_pixel_pipeline(&pixel, &cfg, &[Method::Pedh], &cfg.estimators, seed).unwrap();
        assert_eq!(both.stream_checksum, alone.stream_checksum);
        let tr = Transient::build(&pixel, &cfg.sim).unwrap();
        let stream = sample_stream(&tr, cfg.sim.cycles, seed).unwrap();
        assert_eq!(stream.checksum(), both.stream_checksum);
        assert_eq!(
            both.output(Method::Pedh).unwrap().as_ref().unwrap().bounds,
            alone.output(Method::Pedh).unwrap().as_ref().unwrap().bounds
        );
    }

    #[test]
    fn noiseless_pedh_recovers_distance() {
        let cfg = small_cfg();
        let pixel = PixelConfig::new(7.5, 5.0, 0.0).unwrap();
        let out =
            run_pixel_pipeline(&pixel, &cfg, &[Method::Pedh], &[EstimatorKind::T0], 1).unwrap();
        let m = out.outputs[0].as_ref().unwrap();
        let z = m.distances[0].1.clone().unwrap();
        let bin_m = cfg.sim.z_max() / cfg.sim.bins as f64;
        assert!((z - 7.5).abs() <= 2.0 * bin_m, "{z}");
    }

    #[test]
    fn experiment_is_reproducible_and_reaggregates() {
        let cfg = small_cfg();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.summary_csv(), b.summary_csv());
        assert_eq!(a.per_seed_csv(), b.per_seed_csv());
        assert_eq!(reaggregate(&a.per_seed), a.summary);
        assert_eq!(a.failed(), 0);
        // oedh/pedh/hedh x t0/t1 + two ewh x ewh_peak
        assert_eq!(a.summary.len(), 8);
    }

    #[test]
    fn group_by_depth_rows() {
        let cfg = ExperimentConfig {
            group_by: GroupBy::Depth,
            methods: vec![Method::Pedh, Method::Ewh32],
            estimators: vec![EstimatorKind::T0, EstimatorKind::EwhPeak],
            n_monte_carlo: 1,
            ..small_cfg()
        };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.summary.len(), 3 * 2);
        assert!(r.summary.iter().all(|row| row.key.depth.is_some()));
    }

    #[test]
    fn failing_condition_becomes_error_row() {
        // too few photons for a 32-quantile oracle in 1 cycle
        let cfg = ExperimentConfig {
            sim: crate::transient::SimConfig {
                cycles: 1,
                ..Default::default()
            },
            step: StepParams {
                decay_freeze_cycle: 1,
                ..StepParams::default()
            },
            methods: vec![Method::Oedh, Method::Ewh1024],
            n_monte_carlo: 1,
            ..small_cfg()
        };
        let r = run_experiment(&cfg).unwrap();
        assert!(r.failed() >= 1);
        assert!(r.find(0, "oedh", "t0").unwrap().result.is_err());
        let ewh = r.find(0, "ewh1024", "ewh_peak").unwrap();
        assert!(ewh.result.is_ok() || ewh.result.as_ref().unwrap_err().contains("empty"));
        assert!(r.summary_csv().contains("too few") || r.summary_csv().contains("photons"));
    }

    #[test]
    fn median_tracking_rows() {
        let cfg = ExperimentConfig {
            mode: ExperimentMode::MedianTracking,
            ..small_cfg()
        };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.summary.len(), 2);
        let fixed = r.find(0, "fixed_median", "boundary").unwrap();
        let agg = fixed.result.as_ref().unwrap();
        assert_eq!(agg.boundary_n, 3 * 2);
        assert!(agg.boundary_rmse().unwrap() < 50.0);
    }

    #[test]
    fn sweep_rejects_invalid_values() {
        let spec = SweepSpec::standard(SweepParam::Gamma, vec![0.99, 1.5]);
        assert!(matches!(
            sweep(&spec, &small_cfg()),
            Err(Error::InvalidSweepValue { .. })
        ));
    }

    #[test]
    fn single_value_sweep_matches_experiment() {
        let base = small_cfg();
        let spec = SweepSpec::standard(SweepParam::Gamma, vec![0.999]);
        let points = sweep(&spec, &base).unwrap();
        let cfg = sweep_config(&spec, &base, 0.999).unwrap();
        let report = run_experiment(&cfg).unwrap();
        let row = report
            .find(0, "pedh", "t0")
            .unwrap()
            .result
            .as_ref()
            .unwrap()
            .report();
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].boundary_rmse, row.boundary_rmse_bins.unwrap());
        assert_eq!(points[0].distance_rmse_cm, row.rmse_cm);
    }

    #[test]
    fn feature_export_shape() {
        let cfg = small_cfg();
        let scene = crate::scene::synth_scene(
            &SceneKind::Constant {
                z: 5.0,
                width: 2,
                height: 2,
            },
            PhotonLevels::new(1.0, 1.0),
            cfg.sim.z_max(),
        )
        .unwrap();
        let dir = std::env::temp_dir().join(format!("edh-features-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.bin");
        let sidecar = export_density_features(&scene, &cfg, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 16 + 2 * 2 * 1024 * 4);
        let back = Tensor::read(&path, FEATURE_MAGIC).unwrap();
        assert_eq!(back, density_features(&scene, &cfg).unwrap());
        assert!(fs::read_to_string(sidecar).unwrap().starts_with("# 2 2"));
        let no_pedh = ExperimentConfig {
            methods: vec![Method::Oedh],
            ..cfg
        };
        assert!(density_features(&scene, &no_pedh).is_err());
        fs::remove_dir_all(dir).ok();
    }
}
