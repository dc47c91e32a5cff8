use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edh_core::config::{parse_levels, parse_list, ExperimentConfig, Method, SceneSpec};
use edh_core::estimator::{bin_to_distance, ewh_peak, rho1, t0_hat, t1_hat, EstimatorKind};
use edh_core::harness::{
    export_density_features, pixel_seed, run_experiment, scene_outputs, sweep, sweep_csv,
    SweepParam, SweepSpec,
};
use edh_core::histogram::{
    bounds_tensor, hist_tensor, read_bounds_csv, read_hist_csv, write_bounds_csv, write_hist_csv,
};
use edh_core::metrics::{distance_metrics, InlierMode};
use edh_core::scene::{
    load_depth_map, load_distance_map, DepthFormat, DepthMap, PixelLevels, Scene,
};
use edh_core::transient::{sample_stream, Transient};
use edh_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "edh",
    version,
    about = "Equi-depth photon histogram simulator and evaluation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene override, e.g. `staircase:n=10,z_min=1.5,z_max=13.5` or `file:depth.csv`.
    #[arg(long)]
    scene: Option<String>,
    /// Global seed override; takes precedence over EDH_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Photon levels override, e.g. `1.0:1.0,0.5:2.5`.
    #[arg(long)]
    levels: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Dump transients and photon streams of every pixel (first photon level).
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build per-pixel histograms (first photon level, first Monte-Carlo run).
    Edh {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        q: Option<usize>,
        /// Output file; `.bin` writes a tensor, anything else CSV. Stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate a distance map from saved histograms or from a fresh run.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        estimator: EstimatorKind,
        /// CSV written by `edh edh`. Without it the method is run on the scene.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Method to run when no input is given.
        #[arg(long, default_value = "pedh")]
        method: Method,
        /// Distance map width when the input has no shape header.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare an estimated distance map with ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        est: PathBuf,
        /// Inlier thresholds in percent.
        #[arg(long, default_value = "2,10")]
        inliers: String,
        #[arg(long, default_value = "range")]
        inlier_mode: InlierMode,
        /// Width for headerless CSV maps.
        #[arg(long)]
        width: Option<usize>,
        /// Also write the metrics as a CSV row.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full Monte-Carlo experiment.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Output directory for summary.csv and per_seed.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Vary one step parameter and report averaged errors.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: SweepParam,
        #[arg(long)]
        values: String,
        /// Hold the other step parameters at the config values instead of the
        /// standard tuning settings.
        #[arg(long)]
        use_config_step: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-pixel 1024-channel density features.
    ExportFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(s) = common.seed {
        cfg.global_seed = s;
    }
    if let Some(s) = &common.scene {
        cfg.scene = SceneSpec::parse(s)?;
    }
    if let Some(l) = &common.levels {
        cfg.photon_levels = parse_levels(l)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn first_level_scene(cfg: &ExperimentConfig) -> Result<Scene> {
    let levels = *cfg
        .photon_levels
        .first()
        .ok_or_else(|| Error::InvalidConfig("no photon levels".into()))?;
    Scene::new(cfg.scene.depth_map(&cfg.sim)?, PixelLevels::Uniform(levels))
}

fn output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes)?,
        None => io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn is_bin(path: Option<&Path>) -> bool {
    path.and_then(Path::extension).is_some_and(|e| e == "bin")
}

fn shape_header(width: usize, height: usize) -> String {
    format!("# {width} {height}\n")
}

fn read_shape_header(text: &str) -> Option<(usize, usize)> {
    let line = text.lines().next()?.strip_prefix('#')?;
    let mut it = line.split_whitespace().map(str::parse::<usize>);
    match (it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h))) => Some((w, h)),
        _ => None,
    }
}

fn simulate(common: &Common, out: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let scene = first_level_scene(&cfg)?;
    let streams_dir = out.join("streams");
    fs::create_dir_all(&streams_dir)?;
    let mut depth = Vec::new();
    scene.depth_map().write_csv(&mut depth)?;
    fs::write(out.join("depth.csv"), depth)?;
    let mut transients = String::from("pixel,bin,phi\n");
    let mut checksums = String::from("pixel,seed,photons,checksum\n");
    for i in 0..scene.len() {
        let pixel = scene.pixel(i)?;
        let tr = Transient::build(&pixel, &cfg.sim)?;
        for (k, v) in tr.values().iter().enumerate() {
            transients.push_str(&format!("{i},{k},{v}\n"));
        }
        let seed = pixel_seed(cfg.global_seed, 0, 0, i);
        let stream = sample_stream(&tr, cfg.sim.cycles, seed)?;
        checksums.push_str(&format!(
            "{i},{seed},{},{:016x}\n",
            stream.total_photons(),
            stream.checksum()
        ));
        let f = fs::File::create(streams_dir.join(format!("pixel_{i:05}.csv")))?;
        stream.write_csv(io::BufWriter::new(f))?;
    }
    fs::write(out.join("transients.csv"), transients)?;
    fs::write(out.join("checksums.csv"), checksums)?;
    eprintln!("wrote {} pixels to {}", scene.len(), out.display());
    Ok(())
}

fn edh_cmd(common: &Common, method: Method, q: Option<usize>, out: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(q) = q {
        cfg.q = q;
    }
    let scene = first_level_scene(&cfg)?;
    let (w, h) = (scene.depth_map().width(), scene.depth_map().height());
    let outputs = scene_outputs(&scene, &cfg, method)?;
    let mut buf = Vec::new();
    if method.is_equi_depth() {
        let rows: Vec<_> = outputs.into_iter().filter_map(|o| o.bounds).collect();
        if is_bin(out) {
            buf = bounds_tensor(w, h, &rows)?.to_bytes();
        } else {
            buf.extend(shape_header(w, h).bytes());
            write_bounds_csv(&mut buf, &rows)?;
        }
    } else {
        let rows: Vec<_> = outputs.into_iter().filter_map(|o| o.hist).collect();
        if is_bin(out) {
            buf = hist_tensor(w, h, &rows)?.to_bytes();
        } else {
            buf.extend(shape_header(w, h).bytes());
            write_hist_csv(&mut buf, &rows)?;
        }
    }
    output(out, &buf)
}

fn estimate_cmd(
    common: &Common,
    estimator: EstimatorKind,
    input: Option<&Path>,
    method: Method,
    width: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    let (times, shape) = match input {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| match e.kind() {
                io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
                _ => Error::Io(e),
            })?;
            let shape = read_shape_header(&text);
            let times = match estimator {
                EstimatorKind::EwhPeak => read_hist_csv(&text, cfg.sim.bins)?
                    .iter()
                    .map(ewh_peak)
                    .collect::<Result<Vec<_>>>()?,
                EstimatorKind::T0 => read_bounds_csv(&text)?.iter().map(t0_hat).collect(),
                EstimatorKind::T1 => read_bounds_csv(&text)?
                    .iter()
                    .map(|b| t1_hat(&rho1(b, cfg.knots)))
                    .collect(),
            };
            (times, shape)
        }
        None => {
            if !method.supports(estimator) {
                return Err(Error::InvalidConfig(format!(
                    "{estimator} does not apply to {method}"
                )));
            }
            cfg.estimators = vec![estimator];
            let scene = first_level_scene(&cfg)?;
            let shape = (scene.depth_map().width(), scene.depth_map().height());
            let times = scene_outputs(&scene, &cfg, method)?
                .into_iter()
                .map(|o| match (o.bounds, o.hist) {
                    (Some(b), _) => Ok(match estimator {
                        EstimatorKind::T1 => t1_hat(&rho1(&b, cfg.knots)),
                        _ => t0_hat(&b),
                    }),
                    (None, Some(h)) => ewh_peak(&h),
                    (None, None) => Err(Error::EmptyHistogram),
                })
                .collect::<Result<Vec<_>>>()?;
            (times, Some(shape))
        }
    };
    let distances = times
        .into_iter()
        .map(|t| bin_to_distance(t, &cfg.sim))
        .collect::<Result<Vec<_>>>()?;
    let n = distances.len();
    let (w, h) = match (shape, width) {
        (_, Some(w)) if w > 0 && n % w == 0 => (w, n / w),
        (Some(s), None) => s,
        (_, Some(w)) => {
            return Err(Error::ShapeMismatch(format!(
                "{n} pixels do not fit width {w}"
            )))
        }
        (None, None) => (n, 1),
    };
    let map = DepthMap::unchecked(w, h, distances)?;
    let mut buf = Vec::new();
    map.write_csv(&mut buf)?;
    output(out, &buf)
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cmd(
    common: &Common,
    truth: &Path,
    est: &Path,
    inliers: &str,
    mode: InlierMode,
    width: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(common)?;
    let z_max = cfg.sim.z_max();
    let thresholds: Vec<f64> = parse_list(inliers)?;
    let truth = load_depth_map(truth, DepthFormat::from_path(truth), width, z_max)?;
    let est = load_distance_map(est, DepthFormat::from_path(est), width, z_max)?;
    if (truth.width(), truth.height()) != (est.width(), est.height()) {
        return Err(Error::ShapeMismatch(format!(
            "truth is {}x{}, estimate is {}x{}",
            truth.width(),
            truth.height(),
            est.width(),
            est.height()
        )));
    }
    let report = distance_metrics(est.depths(), truth.depths(), &thresholds, mode, z_max)?;
    print!("{report}");
    if let Some(p) = out {
        let mut csv = String::from("schema_version,n_pixels,rmse_cm,mae_cm");
        for t in &thresholds {
            csv.push_str(&format!(",inlier_{t}"));
        }
        csv.push_str(&format!(
            "\n1,{},{},{}",
            report.n_pixels, report.rmse_cm, report.mae_cm
        ));
        for (_, v) in &report.inlier_pct {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
        fs::write(p, csv)?;
    }
    Ok(())
}

fn experiment_cmd(common: &Common, out: Option<&Path>) -> Result<bool> {
    let mut cfg = load_config(common)?;
    if let Some(o) = out {
        cfg.output_dir = Some(o.to_path_buf());
    }
    let report = run_experiment(&cfg)?;
    print!("{}", report.table());
    if let Some(dir) = &cfg.output_dir {
        for p in report.write(dir)? {
            eprintln!("wrote {}", p.display());
        }
    }
    let failed = report.failed();
    if failed > 0 {
        eprintln!("{failed} condition(s) failed");
    }
    Ok(failed == 0)
}

fn sweep_cmd(
    common: &Common,
    param: SweepParam,
    values: &str,
    use_config_step: bool,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(common)?;
    let values: Vec<f64> = parse_list(values)?;
    let mut spec = SweepSpec::standard(param, values);
    if use_config_step {
        spec.fixed = cfg.step;
    }
    let points = sweep(&spec, &cfg)?;
    output(out, sweep_csv(param, &points).as_bytes())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate { common, out } => simulate(&common, &out)?,
        Command::Edh {
            common,
            method,
            q,
            out,
        } => edh_cmd(&common, method, q, out.as_deref())?,
        Command::Estimate {
            common,
            estimator,
            input,
            method,
            width,
            out,
        } => estimate_cmd(
            &common,
            estimator,
            input.as_deref(),
            method,
            width,
            out.as_deref(),
        )?,
        Command::Evaluate {
            common,
            truth,
            est,
            inliers,
            inlier_mode,
            width,
            out,
        } => evaluate_cmd(
            &common,
            &truth,
            &est,
            &inliers,
            inlier_mode,
            width,
            out.as_deref(),
        )?,
        Command::Experiment { common, out } => return experiment_cmd(&common, out.as_deref()),
        Command::Sweep {
            common,
            param,
            values,
            use_config_step,
            out,
        } => sweep_cmd(&common, param, &values, use_config_step, out.as_deref())?,
        Command::ExportFeatures { common, out } => {
            let cfg = load_config(&common)?;
            let scene = first_level_scene(&cfg)?;
            let sidecar = export_density_features(&scene, &cfg, &out)?;
            eprintln!("wrote {} and {}", out.display(), sidecar.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
