use std::fs;
use std::path::Path;
use std::process::Command;

use switchdiff_cli::{parse_config, run_scenario, RunOptions};

const MODEL: &str = r#"{
    "dim": 1,
    "drift_0": {"family": "InverseRadial", "rho": 2, "sign": -1, "cap": 1},
    "drift_1": {"family": "InverseRadial", "rho": 1, "sign": 1, "cap": 1},
    "intensity_0": {"family": "Constant", "lambda": 0.5},
    "intensity_1": {"family": "Constant", "lambda": 2}
}"#;

fn doc(extra: &str) -> String {
    format!(r#"{{"model": {MODEL}, {extra}}}"#)
}

fn run_in(dir: &Path, text: &str, workers: usize) -> switchdiff_cli::RunOutcome {
    run_scenario(
        parse_config(text).unwrap(),
        &RunOptions {
            workers: Some(workers),
            out_dir: Some(dir.to_path_buf()),
            seed: None,
        },
    )
    .unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn manifest_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &doc(r#""command": "criterion""#), 1);
    let manifest: serde_json::Value = serde_json::from_str(&read(tmp.path(), "manifest.json")).unwrap();
    assert_eq!(manifest, out.manifest);
    let resolved = serde_json::to_string(&manifest["config"]).unwrap();
    let reparsed = parse_config(&resolved).unwrap();
    assert_eq!(reparsed.config, parse_config(&doc(r#""command": "criterion""#)).unwrap().config);
    assert_eq!(manifest["criterion"]["recurrent"], true);
    assert_eq!(manifest["defaults_applied"], serde_json::json!(["dt", "seed", "record_stride"]));
    let csv = read(tmp.path(), "results.csv");
    assert!(csv.starts_with("recurrent,a,b,eps,q,c,c_z0,c_z1\ntrue,6,1.5,"));
    // no stray temp files
    assert!(fs::read_dir(tmp.path())
        .unwrap()
        .all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn sweep_rows_equal_single_hit_runs() {
    let sweep_dir = tempfile::tempdir().unwrap();
    run_in(
        sweep_dir.path(),
        &doc(r#""command": "sweep", "m1": 2, "n_paths": 100, "seed": 7,
               "starts": [{"x0": [4], "z0": 0}, {"x0": [-3], "z0": 1}]"#),
        2,
    );
    let sweep = read(sweep_dir.path(), "results.csv");
    let mut lines = sweep.lines();
    let header = lines.next().unwrap();
    assert_eq!(header, "x0_1,z0,n,n_censored,mean,stderr,ci_lo,ci_hi,theory_bound,satisfied");
    for (row, (x0, z0)) in lines.zip([(4, 0), (-3, 1)]) {
        let hit_dir = tempfile::tempdir().unwrap();
        run_in(
            hit_dir.path(),
            &doc(&format!(
                r#""command": "hit", "x0": [{x0}], "z0": {z0}, "m1": 2, "n_paths": 100, "seed": 7"#
            )),
            1,
        );
        let hit = read(hit_dir.path(), "results.csv");
        assert_eq!(hit.lines().nth(1).unwrap(), row);
    }
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let text = doc(r#""command": "hit", "x0": [5], "m1": 2, "n_paths": 200, "seed": 3"#);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_in(a.path(), &text, 1);
    run_in(b.path(), &text, 4);
    for f in ["results.csv", "manifest.json"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
}

#[test]
fn simulate_writes_path_and_event_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &doc(r#""command": "simulate", "x0": [3], "horizon": 5, "n_paths": 2, "record_stride": 10"#),
        1,
    );
    for f in ["path_0.csv", "events_0.csv", "path_1.csv", "events_1.csv", "results.csv", "manifest.json"] {
        assert!(out.files.iter().any(|g| g == f), "{f}");
    }
    let path = read(tmp.path(), "path_0.csv");
    assert!(path.starts_with("time,x_1,z\n0,3,0\n"));
    assert!(read(tmp.path(), "events_0.csv").starts_with("n,T_n,x_1,new_regime\n0,0,3,0\n"));
}

#[test]
fn invariant_histogram_masses_sum_to_one() {
    let tmp = tempfile::tempdir().unwrap();
    run_in(
        tmp.path(),
        &doc(r#""command": "invariant", "x0": [1], "m1": 2, "burn_in": 10, "horizon": 200, "bins": 6"#),
        1,
    );
    let res = read(tmp.path(), "results.csv");
    let total: f64 = res.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(read(tmp.path(), "histogram.csv").lines().count(), 1 + 6 + 1);
}

fn run_binary(config: &str) -> (i32, tempfile::TempDir) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("scenario.json");
    fs::write(&cfg, config).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_switchdiff"))
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .arg("--workers")
        .arg("2")
        .env("RUST_LOG", "error")
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    (status.code().unwrap(), tmp)
}

#[test]
fn binary_exit_codes() {
    let (code, tmp) = run_binary(&doc(r#""command": "criterion""#));
    assert_eq!(code, 0);
    assert!(tmp.path().join("out/manifest.json").exists());

    let (code, _) = run_binary(&doc(r#""command": "criterion", "dt": 0"#));
    assert_eq!(code, 2);

    // transient model: no bound, so the sweep is refused
    let transient = doc(r#""command": "sweep", "m1": 2, "n_paths": 100,
                           "starts": [{"x0": [5], "z0": 0}]"#)
        .replace("\"lambda\": 2", "\"lambda\": 0.1");
    let (code, _) = run_binary(&transient);
    assert_eq!(code, 3);
    let hit = doc(r#""command": "hit", "x0": [5], "m1": 2, "n_paths": 100, "max_time": 0.01"#);
    let (code, _) = run_binary(&hit);
    assert_eq!(code, 4, "every path censored");
}

#[test]
fn bundled_scenarios_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        parse_config(&fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 4);
}
