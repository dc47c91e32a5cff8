use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn edh(args: &[&str], dir: &Path, env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_edh"));
    cmd.args(args).current_dir(dir).env_remove("EDH_SEED");
    if let Some(s) = env_seed {
        cmd.env("EDH_SEED", s);
    }
    cmd.output().unwrap()
}

fn workdir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("edh-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    fs::write(
        d.join("c.cfg"),
        "# small run\nseed = 3\nn_monte_carlo = 2\nphoton_levels = 1.0:1.0\n\
         sim.cycles = 4000\nscene.kind = staircase\nscene.n_steps = 4\n\
         scene.z_min = 2\nscene.z_max = 12\n",
    )
    .unwrap();
    d
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn experiment_writes_versioned_csv_and_honours_seed_env() {
    let d = workdir("experiment");
    ok(&edh(
        &["experiment", "--config", "c.cfg", "--out", "a"],
        &d,
        None,
    ));
    ok(&edh(
        &["experiment", "--config", "c.cfg", "--out", "b"],
        &d,
        None,
    ));
    ok(&edh(
        &["experiment", "--config", "c.cfg", "--out", "e"],
        &d,
        Some("11"),
    ));
    let read = |p: &str| fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/summary.csv"), read("b/summary.csv"));
    assert_eq!(read("a/per_seed.csv"), read("b/per_seed.csv"));
    assert_ne!(read("a/per_seed.csv"), read("e/per_seed.csv"));
    assert!(String::from_utf8(read("a/summary.csv"))
        .unwrap()
        .starts_with("schema_version,"));
    // --seed beats the environment
    ok(&edh(
        &[
            "experiment",
            "--config",
            "c.cfg",
            "--seed",
            "3",
            "--out",
            "f",
        ],
        &d,
        Some("11"),
    ));
    assert_eq!(read("a/per_seed.csv"), read("f/per_seed.csv"));
    fs::remove_dir_all(d).ok();
}

#[test]
fn histogram_estimate_evaluate_chain() {
    let d = workdir("chain");
    ok(&edh(
        &["simulate", "--config", "c.cfg", "--out", "sim"],
        &d,
        None,
    ));
    assert!(d.join("sim/streams/pixel_00000.csv").exists());
    ok(&edh(
        &[
            "edh", "--config", "c.cfg", "--method", "pedh", "--out", "b.csv",
        ],
        &d,
        None,
    ));
    ok(&edh(
        &[
            "estimate",
            "--config",
            "c.cfg",
            "--estimator",
            "t1",
            "--input",
            "b.csv",
            "--out",
            "d.csv",
        ],
        &d,
        None,
    ));
    let out = edh(
        &[
            "evaluate",
            "--truth",
            "sim/depth.csv",
            "--est",
            "d.csv",
            "--inliers",
            "2,10",
            "--out",
            "m.csv",
        ],
        &d,
        None,
    );
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("RMSE (cm)"));
    let m = fs::read_to_string(d.join("m.csv")).unwrap();
    let row: Vec<&str> = m.lines().nth(1).unwrap().split(',').collect();
    let mae: f64 = row[3].parse().unwrap();
    assert!(mae < 10.0, "{mae}");

    ok(&edh(
        &[
            "edh", "--config", "c.cfg", "--method", "ewh32", "--out", "h.csv",
        ],
        &d,
        None,
    ));
    ok(&edh(
        &[
            "estimate",
            "--config",
            "c.cfg",
            "--estimator",
            "ewh_peak",
            "--input",
            "h.csv",
        ],
        &d,
        None,
    ));
    fs::remove_dir_all(d).ok();
}

#[test]
fn sweep_and_features() {
    let d = workdir("sweep");
    let out = edh(
        &[
            "sweep",
            "--config",
            "c.cfg",
            "--param",
            "gamma",
            "--values",
            "0.999,1.0",
        ],
        &d,
        None,
    );
    ok(&out);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);
    let bad = edh(
        &[
            "sweep", "--config", "c.cfg", "--param", "beta1", "--values", "1.5",
        ],
        &d,
        None,
    );
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("invalid sweep value"));

    ok(&edh(
        &[
            "export-features",
            "--config",
            "c.cfg",
            "--scene",
            "constant:z=5,width=2,height=2",
            "--out",
            "f.bin",
        ],
        &d,
        None,
    ));
    assert_eq!(
        fs::metadata(d.join("f.bin")).unwrap().len(),
        16 + 4 * 1024 * 4
    );
    assert!(d.join("f.bin.depth.csv").exists());
    fs::remove_dir_all(d).ok();
}

#[test]
fn failing_condition_exits_nonzero_and_bad_input_is_reported() {
    let d = workdir("fail");
    fs::write(
        d.join("tiny.cfg"),
        "n_monte_carlo = 1\nphoton_levels = 0.001:0.001\nsim.cycles = 1\n\
         step.decay_freeze_cycle = 1\nmethods = oedh\nestimators = t0\n",
    )
    .unwrap();
    let o = edh(
        &["experiment", "--config", "tiny.cfg", "--out", "t"],
        &d,
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    let summary = fs::read_to_string(d.join("t/summary.csv")).unwrap();
    assert!(summary.lines().skip(1).all(|l| !l.ends_with(',')));

    let missing = edh(&["experiment", "--config", "nope.cfg"], &d, None);
    assert_eq!(missing.status.code(), Some(2));
    fs::write(d.join("typo.cfg"), "step.gama = 0.9\n").unwrap();
    let typo = edh(&["experiment", "--config", "typo.cfg"], &d, None);
    assert_eq!(typo.status.code(), Some(2));
    fs::remove_dir_all(d).ok();
}
