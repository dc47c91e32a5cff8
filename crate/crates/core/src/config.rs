//! Flat `key = value` experiment configuration.
//!
//! Keys are dotted (`step.gamma = 0.99902`); `#` starts a comment. Unknown
//! keys are rejected so typos do not silently fall back to defaults.
//!
//! ```text
//! seed = 7
//! n_monte_carlo = 50
//! q = 32
//! methods = oedh, pedh, hedh, ewh32, ewh1024
//! estimators = t0, t1, ewh_peak
//! photon_levels = 1.0:1.0, 1.0:2.0
//! scene.kind = staircase
//! scene.n_steps = 10
//! step.gamma = 0.99902
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::binner::StepParams;
use crate::error::{Error, Result};
use crate::estimator::{EstimatorKind, KnotPlacement};
use crate::metrics::InlierMode;
use crate::scene::{
    load_depth_map, synth_depth_map, DepthFormat, DepthMap, PhotonLevels, SceneKind,
};
use crate::transient::SimConfig;

/// Environment variable that overrides the configured global seed.
pub const SEED_ENV: &str = "EDH_SEED";

/// Histogram constructions the harness can run on a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Oedh,
    Pedh,
    Hedh,
    Ewh32,
    Ewh1024,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Oedh,
        Method::Pedh,
        Method::Hedh,
        Method::Ewh32,
        Method::Ewh1024,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Oedh => "oedh",
            Method::Pedh => "pedh",
            Method::Hedh => "hedh",
            Method::Ewh32 => "ewh32",
            Method::Ewh1024 => "ewh1024",
        }
    }

    pub fn is_equi_depth(self) -> bool {
        matches!(self, Method::Oedh | Method::Pedh | Method::Hedh)
    }

    /// EW bin count for the equal-width methods.
    pub fn ew_bins(self) -> Option<usize> {
        match self {
            Method::Ewh32 => Some(32),
            Method::Ewh1024 => Some(1024),
            _ => None,
        }
    }

    /// Whether `estimator` applies to this method's output.
    pub fn supports(self, estimator: EstimatorKind) -> bool {
        match estimator {
            EstimatorKind::T0 | EstimatorKind::T1 => self.is_equi_depth(),
            EstimatorKind::EwhPeak => !self.is_equi_depth(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s}")))
    }
}

/// Where the scene geometry comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneSpec {
    Synthetic(SceneKind),
    File {
        path: PathBuf,
        format: DepthFormat,
        width: Option<usize>,
    },
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec::Synthetic(SceneKind::staircase(10, 1.5, 13.5))
    }
}

impl SceneSpec {
    pub fn depth_map(&self, sim: &SimConfig) -> Result<DepthMap> {
        match self {
            SceneSpec::Synthetic(kind) => synth_depth_map(kind, sim.z_max()),
            SceneSpec::File {
                path,
                format,
                width,
            } => load_depth_map(path, *format, *width, sim.z_max()),
        }
    }

    /// Parses the compact command-line form, e.g.
    /// `staircase:n=10,z_min=1.5,z_max=13.5`, `constant:z=7.5,width=4,height=4`,
    /// `two_plane:z1=3,z2=12,width=8,height=8` or `file:depth.csv`.
    pub fn parse(spec: &str) -> Result<SceneSpec> {
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        if kind == "file" {
            let path = PathBuf::from(rest);
            let format = DepthFormat::from_path(&path);
            return Ok(SceneSpec::File {
                path,
                format,
                width: None,
            });
        }
        let mut map = BTreeMap::new();
        for item in rest.split(',').filter(|s| !s.trim().is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got {item}")))?;
            let key = match k.trim() {
                "n" => "n_steps",
                other => other,
            };
            map.insert(format!("scene.{key}"), v.trim().to_string());
        }
        map.insert("scene.kind".into(), kind.to_string());
        let mut raw = RawConfig { entries: map };
        let spec = scene_from(&mut raw)?;
        raw.finish()?;
        Ok(spec)
    }
}

/// Experiment table layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExperimentMode {
    /// Distance metrics per (levels, method, estimator).
    #[default]
    Table,
    /// Single median binner, fixed vs optimized stepping, boundary RMSE
    /// against the transient's true median.
    MedianTracking,
}

/// How summary rows group pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupBy {
    #[default]
    All,
    /// One row per distinct ground-truth depth.
    Depth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneSpec,
    pub sim: SimConfig,
    pub photon_levels: Vec<PhotonLevels>,
    pub methods: Vec<Method>,
    pub estimators: Vec<EstimatorKind>,
    pub step: StepParams,
    pub q: usize,
    /// HEDH and median-tracking fixed step, in bins.
    pub fixed_step: f64,
    pub n_monte_carlo: usize,
    pub global_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub inlier_thresholds: Vec<f64>,
    pub inlier_mode: InlierMode,
    pub knots: KnotPlacement,
    pub mode: ExperimentMode,
    pub group_by: GroupBy,
}

/// The eight photon-level pairs used throughout the evaluation.
pub fn standard_photon_levels() -> Vec<PhotonLevels> {
    [
        (1.0, 1.0),
        (1.0, 2.0),
        (1.0, 5.0),
        (1.0, 10.0),
        (0.5, 0.5),
        (0.5, 1.0),
        (0.5, 2.5),
        (0.5, 5.0),
    ]
    .into_iter()
    .map(|(s, b)| PhotonLevels::new(s, b))
    .collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scene: SceneSpec::default(),
            sim: SimConfig::default(),
            photon_levels: standard_photon_levels(),
            methods: Method::ALL.to_vec(),
            estimators: vec![EstimatorKind::T0, EstimatorKind::T1, EstimatorKind::EwhPeak],
            step: StepParams::default(),
            q: 32,
            fixed_step: 1.0,
            n_monte_carlo: 50,
            global_seed: 0,
            output_dir: None,
            inlier_thresholds: vec![2.0, 10.0],
            inlier_mode: InlierMode::Range,
            knots: KnotPlacement::Midpoint,
            mode: ExperimentMode::Table,
            group_by: GroupBy::All,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.step.validate_for(self.sim.cycles)?;
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods selected".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig("no estimators selected".into()));
        }
        if self.n_monte_carlo < 1 {
            return Err(Error::InvalidConfig(
                "n_monte_carlo must be at least 1".into(),
            ));
        }
        if self.photon_levels.is_empty() {
            return Err(Error::InvalidConfig("no photon levels".into()));
        }
        if self.q < 2 {
            return Err(Error::InvalidConfig(format!("q = {} < 2", self.q)));
        }
        if !(self.fixed_step > 0.0) {
            return Err(Error::InvalidConfig("fixed_step must be positive".into()));
        }
        Ok(())
    }

    /// Applies `EDH_SEED` if it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.global_seed = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={v} is not a u64")))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        text.parse()
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;
        let mut cfg = ExperimentConfig::default();
        if raw.has_prefix("scene.") {
            cfg.scene = scene_from(&mut raw)?;
        }
        raw.take_into("seed", &mut cfg.global_seed)?;
        raw.take_into("n_monte_carlo", &mut cfg.n_monte_carlo)?;
        raw.take_into("q", &mut cfg.q)?;
        raw.take_into("hedh.fixed_step", &mut cfg.fixed_step)?;
        if let Some(v) = raw.take("methods") {
            cfg.methods = parse_list(&v)?;
        }
        if let Some(v) = raw.take("estimators") {
            cfg.estimators = parse_list(&v)?;
        }
        if let Some(v) = raw.take("photon_levels") {
            cfg.photon_levels = parse_levels(&v)?;
        }
        raw.take_into("sim.bins", &mut cfg.sim.bins)?;
        raw.take_into("sim.period", &mut cfg.sim.period)?;
        raw.take_into("sim.fwhm", &mut cfg.sim.fwhm)?;
        raw.take_into("sim.cycles", &mut cfg.sim.cycles)?;
        raw.take_into("sim.c", &mut cfg.sim.c)?;
        raw.take_into("step.k_pct", &mut cfg.step.k_pct)?;
        raw.take_into("step.gamma", &mut cfg.step.gamma)?;
        raw.take_into("step.beta1", &mut cfg.step.beta1)?;
        raw.take_into("step.beta2", &mut cfg.step.beta2)?;
        raw.take_into("step.decay_freeze_cycle", &mut cfg.step.decay_freeze_cycle)?;
        if let Some(v) = raw.take("step.clip") {
            cfg.step.clip = match v.as_str() {
                "off" | "none" | "" => None,
                s => Some(parse_value("step.clip", s)?),
            };
        }
        if let Some(v) = raw.take("output.dir") {
            cfg.output_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = raw.take("metrics.inliers") {
            cfg.inlier_thresholds = parse_list(&v)?;
        }
        raw.take_into("metrics.inlier_mode", &mut cfg.inlier_mode)?;
        raw.take_into("estimator.knots", &mut cfg.knots)?;
        if let Some(v) = raw.take("experiment.mode") {
            cfg.mode = match v.as_str() {
                "table" => ExperimentMode::Table,
                "median_tracking" => ExperimentMode::MedianTracking,
                other => return Err(Error::InvalidConfig(format!("unknown mode {other}"))),
            };
        }
        if let Some(v) = raw.take("experiment.group_by") {
            cfg.group_by = match v.as_str() {
                "all" => GroupBy::All,
                "depth" => GroupBy::Depth,
                other => return Err(Error::InvalidConfig(format!("unknown group_by {other}"))),
            };
        }
        raw.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("line {}", i + 1), "expected `key = value`"))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::parse(format!("line {}", i + 1), "empty key"));
            }
            if entries
                .insert(key.to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(Error::parse(
                    format!("line {}", i + 1),
                    format!("duplicate key {key}"),
                ));
            }
        }
        Ok(RawConfig { entries })
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.entries.keys().any(|k| k.starts_with(prefix))
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn take_into<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key) {
            *slot = parse_value(key, &v)?;
        }
        Ok(())
    }

    fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        let mut v = default;
        self.take_into(key, &mut v)?;
        Ok(v)
    }

    fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(Error::InvalidConfig(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value for {key}: {v:?}")))
}

/// Comma-separated list.
pub fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value("list item", s))
        .collect()
}

/// `sig:bkg` pairs separated by commas.
pub fn parse_levels(v: &str) -> Result<Vec<PhotonLevels>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (s, b) = pair.split_once(':').ok_or_else(|| {
                Error::InvalidConfig(format!("photon level {pair:?} is not sig:bkg"))
            })?;
            Ok(PhotonLevels::new(
                parse_value("signal level", s)?,
                parse_value("background level", b)?,
            ))
        })
        .collect()
}

fn scene_from(raw: &mut RawConfig) -> Result<SceneSpec> {
    let kind = raw.take("scene.kind").unwrap_or_else(|| "staircase".into());
    let spec = match kind.as_str() {
        "staircase" => {
            let n_steps = raw.take_or("scene.n_steps", 10usize)?;
            SceneSpec::Synthetic(SceneKind::Staircase {
                n_steps,
                z_min: raw.take_or("scene.z_min", 1.5)?,
                z_max: raw.take_or("scene.z_max", 13.5)?,
                width: raw.take_or("scene.width", n_steps)?,
                height: raw.take_or("scene.height", 1usize)?,
            })
        }
        "constant" => SceneSpec::Synthetic(SceneKind::Constant {
            z: raw.take_or("scene.z", 7.5)?,
            width: raw.take_or("scene.width", 1usize)?,
            height: raw.take_or("scene.height", 1usize)?,
        }),
        "two_plane" => SceneSpec::Synthetic(SceneKind::TwoPlane {
            z1: raw.take_or("scene.z1", 3.0)?,
            z2: raw.take_or("scene.z2", 12.0)?,
            width: raw.take_or("scene.width", 2usize)?,
            height: raw.take_or("scene.height", 1usize)?,
        }),
        "file" => {
            let path = raw
                .take("scene.path")
                .ok_or_else(|| Error::InvalidConfig("scene.kind = file needs scene.path".into()))?;
            let path = PathBuf::from(path);
            let format = match raw.take("scene.format") {
                Some(f) => f.parse()?,
                None => DepthFormat::from_path(&path),
            };
            let width = match raw.take("scene.width") {
                Some(w) => Some(parse_value("scene.width", &w)?),
                None => None,
            };
            SceneSpec::File {
                path,
                format,
                width,
            }
        }
        other => return Err(Error::InvalidConfig(format!("unknown scene kind {other}"))),
    };
    Ok(spec)
}
