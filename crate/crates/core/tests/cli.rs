use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn form(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../forms")
        .join(name);
    p.to_string_lossy().into_owned()
}

fn sqsieve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqsieve"))
        .args(args)
        .env_remove("SQSIEVE_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn report(args: &[&str]) -> Value {
    let out = sqsieve(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json report on stdout")
}

fn counts(r: &Value) -> Vec<(u64, u64)> {
    r["result"]["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c["B"].as_u64().unwrap(), c["N"].as_u64().unwrap()))
        .collect()
}

#[test]
fn count_small_boxes() {
    let fd = form("fdiag.json");
    assert_eq!(
        counts(&report(&["count", "--form", &fd, "--B", "1"])),
        vec![(1, 21)]
    );
    assert_eq!(
        counts(&report(&["count", "--form", &fd, "--B", "0"])),
        vec![(0, 1)]
    );
    let grid = counts(&report(&["count", "--form", &fd, "--B-grid", "8,16,32,64"]));
    assert_eq!(grid.len(), 4);
    assert!(grid.windows(2).all(|w| w[0].1 <= w[1].1));
}

#[test]
fn count_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("sub/count");
    let out = sqsieve(&[
        "count",
        "--form",
        &form("fdiag.json"),
        "--B-grid",
        "0,1,2",
        "--out",
        stem.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let mut rdr = csv::Reader::from_path(stem.with_extension("csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["B", "N", "sieve_rhs", "ratio", "seconds"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(&rows[1][1], "21");
    let json: Value =
        serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json")).unwrap())
            .unwrap();
    assert_eq!(json["passed"], Value::Bool(true));
    assert_eq!(json["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_form_file_is_an_error() {
    let out = sqsieve(&["count", "--form", "/nonexistent/form.json", "--B", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reading form file"));
    let out = sqsieve(&["count", "--B", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--form"));
}

#[test]
fn forced_sieve_checks_pass() {
    let r = report(&[
        "sieve",
        "--form",
        &form("f0.json"),
        "--B",
        "20",
        "--primes1",
        "3,5",
        "--primes2",
        "7",
        "--force",
    ]);
    assert_eq!(r["passed"], Value::Bool(true));
    assert!(r["warnings"].as_array().unwrap().is_empty());
    assert!(r["result"]["sieve_rhs"]["value"].as_f64().unwrap() > 0.0);
    let unforced = report(&[
        "sieve",
        "--form",
        &form("f0.json"),
        "--B",
        "20",
        "--primes1",
        "3,5",
        "--primes2",
        "7",
    ]);
    assert_eq!(unforced["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn same_seed_same_report() {
    let args = [
        "sieve",
        "--form",
        &form("f0.json"),
        "--B",
        "12",
        "--primes1",
        "3,5",
        "--primes2",
        "7",
        "--seed",
        "11",
    ];
    let strip = |mut v: Value| {
        v.as_object_mut().unwrap().remove("timings");
        v
    };
    let a = strip(report(&args));
    let b = strip(report(&args));
    assert_eq!(a, b);
    assert_eq!(a["seed"], Value::from(11));

    let katz = [
        "charsum",
        "--form",
        &form("f0.json"),
        "--suite",
        "katz",
        "--primes1",
        "11,13",
        "--samples",
        "5",
    ];
    let c = report(&[&katz[..], &["--seed", "3"]].concat());
    let d = report(&[&katz[..], &["--seed", "3"]].concat());
    let e = report(&[&katz[..], &["--seed", "4"]].concat());
    assert_eq!(c, d);
    assert_ne!(c["result"], e["result"]);
    assert_ne!(c["config_hash"], e["config_hash"]);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let text = format!(r#"{{"form": {:?}, "B": 1, "seed": 5}}"#, form("fdiag.json"));
    std::fs::write(&cfg, text).unwrap();
    let r = report(&["count", "--config", cfg.to_str().unwrap()]);
    assert_eq!(counts(&r), vec![(1, 21)]);
    assert_eq!(r["seed"], Value::from(5));
    let r = report(&["count", "--config", cfg.to_str().unwrap(), "--B", "0"]);
    assert_eq!(counts(&r), vec![(0, 1)]);

    std::fs::write(&cfg, r#"{"unknown_knob": 1}"#).unwrap();
    let out = sqsieve(&["count", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_tolerance_is_rejected() {
    let out = sqsieve(&["poisson", "--form", &form("f0.json"), "--tol", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--tol"));
}

#[test]
fn empty_poisson_matrix_is_an_error() {
    let out = sqsieve(&[
        "poisson",
        "--form",
        &form("f0.json"),
        "--primes1",
        "",
        "--primes2",
        "",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}

#[test]
fn poisson_single_cells() {
    let f0 = form("f0.json");
    let base = [
        "poisson",
        "--form",
        &f0,
        "--primes1",
        "3",
        "--primes2",
        "7",
        "--B",
        "20",
    ];
    let r = report(&base);
    assert_eq!(r["passed"], Value::Bool(true));
    assert!(r["result"]["max_rel_error"].as_f64().unwrap() <= 1e-6);
    let r = report(&[&base[..], &["--character", "trivial"]].concat());
    assert!(r["result"]["max_rel_error"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn poisson_truncation_error_fails_the_cell() {
    let out = sqsieve(&[
        "poisson",
        "--form",
        &form("f0.json"),
        "--primes1",
        "3",
        "--primes2",
        "5",
        "--B",
        "2",
        "--truncation",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["result"]["failures"].as_array().unwrap().len(), 1);
}

#[test]
fn charsum_suites_pass_on_small_primes() {
    let r = report(&[
        "charsum",
        "--form",
        &form("f0.json"),
        "--primes1",
        "3,5",
        "--samples",
        "10",
    ]);
    assert_eq!(r["passed"], Value::Bool(true));
    let names: Vec<&str> = r["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"oracle_anchor") && names.contains(&"dual_anchors"));
}

#[test]
fn charsum_budget_errors_are_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("cs");
    let out = sqsieve(&[
        "charsum",
        "--form",
        &form("f0.json"),
        "--suite",
        "oracle",
        "--primes1",
        "3,47",
        "--out",
        stem.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let mut rdr = csv::Reader::from_path(stem.with_extension("csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 27 + 1);
    assert!(rows.last().unwrap()[8].contains("budget"));
}

#[test]
fn budget_and_fit() {
    let r = report(&["budget"]);
    assert_eq!(
        r["result"]["scan"]["argmin_p2_exponent"].as_f64().unwrap(),
        0.3
    );
    let r = report(&[
        "fit",
        "--form",
        &form("fdiag.json"),
        "--B-grid",
        "4,8,16,32",
    ]);
    let slope = r["result"]["slope"].as_f64().unwrap();
    assert!((1.5..2.5).contains(&slope));
    let out = sqsieve(&["fit", "--form", &form("fdiag.json"), "--B-grid", "4,8"]);
    assert_eq!(out.status.code(), Some(2));
}
