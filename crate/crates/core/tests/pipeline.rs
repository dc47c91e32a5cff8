use std::collections::BTreeMap;
use std::fs;

use edh_core::config::{ExperimentConfig, Method, SceneSpec};
use edh_core::estimator::{rho1, EstimatorKind, KnotPlacement, DENSITY_GRID};
use edh_core::harness::{
    density_features, export_density_features, pixel_seed, run_experiment, run_pixel_pipeline,
};
use edh_core::histogram::EdhBoundaries;
use edh_core::scene::{synth_scene, PhotonLevels, PixelConfig, SceneKind};
use edh_core::tensor::{Tensor, FEATURE_MAGIC};
use edh_core::transient::{sample_stream, SimConfig, Transient};

fn small(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        scene: SceneSpec::Synthetic(SceneKind::staircase(10, 1.5, 13.5)),
        photon_levels: vec![PhotonLevels::new(1.0, 0.5), PhotonLevels::new(0.5, 2.5)],
        n_monte_carlo: 3,
        sim: SimConfig {
            cycles: 4000,
            ..SimConfig::default()
        },
        global_seed: seed,
        ..ExperimentConfig::default()
    }
}

fn tmp(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("edh-pipeline-{name}-{}", std::process::id()));
    fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn every_method_sees_the_same_stream() {
    let cfg = small(5);
    let pixel = PixelConfig::new(4.2, 1.0, 2.0).unwrap();
    let seed = pixel_seed(cfg.global_seed, 0, 0, 0);
    let expected = sample_stream(
        &Transient::build(&pixel, &cfg.sim).unwrap(),
        cfg.sim.cycles,
        seed,
    )
    .unwrap()
    .checksum();
    for m in Method::ALL {
        let out = run_pixel_pipeline(&pixel, &cfg, &[m], &cfg.estimators, seed).unwrap();
        assert_eq!(out.stream_checksum, expected, "{m}");
    }
}

#[test]
fn shape_contract_per_pair() {
    let cfg = ExperimentConfig {
        group_by: edh_core::config::GroupBy::Depth,
        n_monte_carlo: 1,
        ..small(1)
    };
    let r = run_experiment(&cfg).unwrap();
    // 10 depths x (3 equi-depth methods x 2 estimators + 2 EWH x 1)
    assert_eq!(r.summary.len(), 2 * 10 * 8);
    let csv = r.summary_csv();
    assert!(csv.starts_with("schema_version,"));
    assert_eq!(csv.lines().count(), 1 + 2 * 10 * 8);
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tmp("repro");
    let a = run_experiment(&small(9)).unwrap();
    let b = run_experiment(&small(9)).unwrap();
    a.write(&dir.join("a")).unwrap();
    b.write(&dir.join("b")).unwrap();
    for f in ["summary.csv", "per_seed.csv"] {
        assert_eq!(
            fs::read(dir.join("a").join(f)).unwrap(),
            fs::read(dir.join("b").join(f)).unwrap()
        );
    }
    let c = run_experiment(&small(10)).unwrap();
    assert_ne!(a.per_seed_csv(), c.per_seed_csv());
    fs::remove_dir_all(dir).ok();
}

#[test]
fn per_seed_csv_reaggregates_to_summary() {
    let r = run_experiment(&small(4)).unwrap();
    let parse = |text: &str| -> (Vec<String>, Vec<Vec<String>>) {
        let mut lines = text.lines();
        let header = lines.next().unwrap().split(',').map(String::from).collect();
        let rows = lines
            .map(|l| l.split(',').map(String::from).collect())
            .collect();
        (header, rows)
    };
    let (h, seed_rows) = parse(&r.per_seed_csv());
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let key_cols = [
        col("sig"),
        col("bkg"),
        col("method"),
        col("estimator"),
        col("depth_m"),
    ];
    let mut sums: BTreeMap<Vec<String>, (usize, f64, f64)> = BTreeMap::new();
    for row in &seed_rows {
        let key: Vec<String> = key_cols.iter().map(|&c| row[c].clone()).collect();
        let e = sums.entry(key).or_default();
        e.0 += row[col("n_sq")].parse::<usize>().unwrap();
        e.1 += row[col("sum_sq_m")].parse::<f64>().unwrap();
        e.2 += row[col("boundary_sq")].parse::<f64>().unwrap();
    }
    let (sh, summary_rows) = parse(&r.summary_csv());
    let scol = |name: &str| sh.iter().position(|c| c == name).unwrap();
    assert_eq!(summary_rows.len(), sums.len());
    for row in &summary_rows {
        let key: Vec<String> = [
            scol("sig"),
            scol("bkg"),
            scol("method"),
            scol("estimator"),
            scol("depth_m"),
        ]
        .iter()
        .map(|&c| row[c].clone())
        .collect();
        let (n, sq, bsq) = sums[&key];
        let rmse: f64 = row[scol("rmse_cm")].parse().unwrap();
        assert_eq!(rmse, 100.0 * (sq / n as f64).sqrt(), "{key:?}");
        let stored_bsq: f64 = row[scol("boundary_sq")].parse().unwrap();
        assert_eq!(stored_bsq, bsq);
    }
}

#[test]
fn features_round_trip_bit_identical() {
    let cfg = small(2);
    let scene = synth_scene(
        &SceneKind::TwoPlane {
            z1: 3.0,
            z2: 9.0,
            width: 3,
            height: 2,
        },
        PhotonLevels::new(1.0, 1.0),
        cfg.sim.z_max(),
    )
    .unwrap();
    let dir = tmp("features");
    let path = dir.join("features.bin");
    export_density_features(&scene, &cfg, &path).unwrap();
    assert_eq!(
        fs::metadata(&path).unwrap().len() as usize,
        16 + 6 * DENSITY_GRID * 4
    );
    let back = Tensor::read(&path, FEATURE_MAGIC).unwrap();
    let direct = density_features(&scene, &cfg).unwrap();
    assert_eq!(
        back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        direct.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(
        (back.width, back.height, back.channels),
        (3, 2, DENSITY_GRID)
    );
    fs::remove_dir_all(dir).ok();
}

#[test]
fn uniform_bounds_give_flat_features() {
    let b = EdhBoundaries::uniform(32, 1024.0);
    let d = rho1(&b, KnotPlacement::Midpoint);
    assert_eq!(d.values.len(), DENSITY_GRID);
    assert!(d.values.iter().all(|&v| (v - 32.0 / 1024.0).abs() < 1e-12));
}

#[test]
fn estimates_land_near_truth_at_low_background() {
    let cfg = ExperimentConfig {
        methods: vec![Method::Oedh, Method::Pedh],
        estimators: vec![EstimatorKind::T0],
        photon_levels: vec![PhotonLevels::new(1.0, 0.5)],
        ..small(8)
    };
    let r = run_experiment(&cfg).unwrap();
    for m in ["oedh", "pedh"] {
        let rep = r
            .find(0, m, "t0")
            .unwrap()
            .result
            .as_ref()
            .unwrap()
            .report();
        assert!(rep.mae_cm < 5.0, "{m}: {}", rep.mae_cm);
        assert_eq!(rep.inliers(2.0), Some(100.0));
    }
}
