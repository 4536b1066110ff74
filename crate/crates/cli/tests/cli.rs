use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sigma2lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sigma2lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report_at(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).expect("report written")).expect("valid JSON")
}

fn metric(v: &Value, name: &str) -> f64 {
    v["report"]["metrics"][name]
        .as_f64()
        .unwrap_or_else(|| panic!("metric {name} missing"))
}

fn without_wall_time(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("wall_time_seconds");
    v
}

#[test]
fn balance_example_passes_and_writes_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("balance.json");
    let o = sigma2lab(&[
        "verify-balance",
        "--n",
        "2",
        "--K",
        "1",
        "--samples",
        "100000",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v = report_at(&out);
    assert_eq!(v["pass"], true);
    assert!(metric(&v, "worst_identity_gap") < 1e-10);
    // stdout carries the same document
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed, v);
}

#[test]
fn on_shell_quadratic_solve_writes_a_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solve.json");
    let o = sigma2lab(&[
        "solve",
        "--n",
        "2",
        "--grid",
        "33",
        "--R",
        "1",
        "--bc",
        "quadratic:3,0.3333333",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v = report_at(&out);
    assert!(metric(&v, "residual_norm") <= 1e-10);
    let grid = dir.path().join("solve.grid");
    assert_eq!(v["grid_path"].as_str(), grid.to_str());
    let (u, k) = sigma2_pde::io::read_grid(&grid).unwrap();
    assert_eq!((u.dim(), u.shape(), k), (2, 33, 1.0));
    assert!(sigma2_pde::io::sidecar_path(&grid).exists());
}

#[test]
fn identical_configs_give_identical_numbers() {
    let args = [
        "verify-jacobi",
        "--n",
        "3",
        "--K",
        "1",
        "--samples",
        "2000",
        "--seed",
        "11",
    ];
    let a: Value = serde_json::from_slice(&sigma2lab(&args).stdout).unwrap();
    let b: Value = serde_json::from_slice(&sigma2lab(&args).stdout).unwrap();
    assert_eq!(without_wall_time(a), without_wall_time(b));
}

#[test]
fn failed_assertion_exits_one() {
    // Λ below the threshold (1+ε)/(1−ε)·K is reported, not silently raised.
    let o = sigma2lab(&[
        "verify-jacobi",
        "--n",
        "3",
        "--K",
        "1",
        "--Lambda",
        "0.5",
        "--samples",
        "500",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["pass"], false);
}

#[test]
fn module_errors_are_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad.json");
    let o = sigma2lab(&[
        "solve",
        "--n",
        "2",
        "--grid",
        "9",
        "--bc",
        "bogus:1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let v = report_at(&out);
    assert_eq!(v["pass"], false);
    assert!(v["error"].as_str().unwrap().contains("bogus"));
}

#[test]
fn bad_flags_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cfg.json");
    for args in [
        vec!["verify-balance", "--samples", "0"],
        vec!["verify-balance", "--n", "9"],
        vec!["solve", "--n", "2"],
        vec!["solve", "--n", "4", "--bc", "quadratic:1,1,1,1"],
        vec!["experiment-mvi", "--grid", "16"],
        vec!["experiment-invariance", "--n", "3"],
    ] {
        let mut args = args;
        args.extend(["--out", out.to_str().unwrap()]);
        let o = sigma2lab(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert_eq!(report_at(&out)["pass"], false);
    }
}

#[test]
fn scaling_csv_has_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scaling.json");
    let o = sigma2lab(&[
        "experiment-scaling",
        "--grid",
        "9",
        "--samples",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    let v = report_at(&out);
    assert_eq!(o.status.code(), Some(if v["pass"] == true { 0 } else { 1 }));
    let csv = dir.path().join("scaling.csv");
    assert_eq!(v["csv_path"].as_str(), csv.to_str());
    let mut rd = csv::Reader::from_path(&csv).unwrap();
    let header: Vec<String> = rd.headers().unwrap().iter().map(str::to_owned).collect();
    assert_eq!(
        header,
        [
            "t",
            "R",
            "grad_sup",
            "lambda_max_origin",
            "b_origin",
            "residual_norm",
            "flagged"
        ]
    );
    assert!(rd.records().count() > 0);
    // only the finished files remain; temporaries were renamed away
    let mut names: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["scaling.csv", "scaling.json"]);
}
