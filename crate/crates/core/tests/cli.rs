use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn selfdistill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfdistill"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gap_study_writes_hashed_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gap");
    let res = selfdistill(&["gap-study", "--out-dir", out.to_str().unwrap(), "--k", "2"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));

    for f in ["config.json", "meta.json", "gap_study.csv", "summary.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    let hash = meta["config_sha256"].as_str().unwrap();
    assert_eq!(hash.len(), 64);

    let csv = fs::read_to_string(out.join("gap_study.csv")).unwrap();
    let first = csv.lines().next().unwrap();
    assert!(first.starts_with(&format!("# config_sha256={hash}")), "{first}");
    assert!(csv.lines().nth(1).unwrap().starts_with("epsilon,k,"));

    // config.json round-trips into the same hash on a rerun
    let again = tmp.path().join("gap2");
    let cfg = out.join("config.json");
    let res = selfdistill(&[
        "gap-study",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        again.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0);
    assert_eq!(
        fs::read_to_string(out.join("gap_study.csv")).unwrap(),
        fs::read_to_string(again.join("gap_study.csv")).unwrap()
    );
}

#[test]
fn synth_sweep_output_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let res = selfdistill(&[
            "synth-sweep",
            "--out-dir",
            dir.to_str().unwrap(),
            "--lambda-grid",
            "0.01:10:4",
            "--seed",
            "5",
        ]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        (String::from_utf8(res.stdout).unwrap(), fs::read_to_string(dir.join("curves.csv")).unwrap())
    };
    let (stdout_a, csv_a) = run("a");
    let (stdout_b, csv_b) = run("b");
    assert_eq!(stdout_a, stdout_b);
    assert_eq!(csv_a, csv_b);
    assert!(csv_a.starts_with("# config_sha256="));
    assert!(csv_a.contains("seed=5"));
    // 13 grid points times k = 0..=4, plus the two header lines
    assert_eq!(csv_a.lines().count(), 13 * 5 + 2);
    assert!(stdout_a.contains("pointwise dominance        true"));
}

#[test]
fn flag_without_effect_is_a_config_error() {
    let res = selfdistill(&["gap-study", "--trials", "10"]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("--trials"));
}

#[test]
fn unparseable_config_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", "{ \"epsilons\": ");
    assert_eq!(code(&selfdistill(&["gap-study", "--config", &cfg])), 2);
    assert_eq!(code(&selfdistill(&["real-data"])), 2);
    assert_eq!(code(&selfdistill(&["tune", "--lambda-grid", "1:0.1:3"])), 2);
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!(
        r#"{{"dataset": {{"name": "nothing", "path": "{}", "features": ["a"], "target": "y"}}}}"#,
        tmp.path().join("absent.csv").display()
    );
    let cfg = write_config(tmp.path(), "real.json", &body);
    let res = selfdistill(&["real-data", "--config", &cfg]);
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn missed_bound_is_infeasible_when_required() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sweep.json",
        r#"{
            "instance": {"d": 4, "n": 4, "singular_values": [1.0, 0.5, 0.3333333333333333, 0.25],
                         "theta": {"kind": "aligned", "direction": 1, "norm": 1.0},
                         "gamma": 0.5, "seed": 3},
            "lambda_grid": [1e-9, 1e9],
            "ks": [0, 4],
            "require_bound": true
        }"#,
    );
    let res = selfdistill(&["synth-sweep", "--config", &cfg]);
    assert_eq!(code(&res), 4, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn tune_on_synthetic_data_reports_a_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("tune");
    let res = selfdistill(&[
        "tune",
        "--k",
        "1",
        "--lambda-grid",
        "0.1,1,10,100",
        "--seed",
        "9",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("validation_mse"));
    let tuned: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("tuned.json")).unwrap()).unwrap();
    assert_eq!(tuned["meta"]["seeds"][0], 9);
}
