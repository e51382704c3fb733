use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/g2_reference.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schottky-vir"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_fixture(args: &[&str]) -> (i32, Value) {
    let f = fixture();
    let mut all = vec!["--config", f.to_str().unwrap()];
    all.extend_from_slice(args);
    let out = run(&all);
    let v = serde_json::from_slice(&out.stdout).expect("json report");
    (out.status.code().unwrap(), v)
}

fn tmp(name: &str, body: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("schottky-vir-{}-{name}", std::process::id()));
    std::fs::write(&p, body).unwrap();
    p
}

fn is_complex(v: &Value) -> bool {
    v.as_array()
        .is_some_and(|a| a.len() == 2 && a.iter().all(Value::is_number))
}

#[test]
fn graphs_census_n2() {
    let out = run(&["graphs", "--n", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["count"], 7);
    let graphs = v["graphs"].as_array().unwrap();
    assert_eq!(graphs.len(), 7);
    // labels are 1-based
    for g in graphs {
        for m in g["mapping"].as_array().unwrap() {
            if let Some(j) = m.as_u64() {
                assert!((1..=2).contains(&j));
            }
        }
    }
    let cycles: usize = graphs.iter().map(|g| g["cycles"].as_array().unwrap().len()).sum();
    // identity has two loops, the swap one 2-cycle, each single loop one
    assert_eq!(cycles, 2 + 1 + 1 + 1);
}

#[test]
fn validate_fixture_passes() {
    let (code, v) = run_fixture(&["validate"]);
    assert_eq!(code, 0);
    assert_eq!(v["valid"], true);
    assert!(v["min_margin"].as_f64().unwrap() > 0.0);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(v["truncation"]["max_word_length"], 8);
}

#[test]
fn same_seed_same_bytes() {
    let f = fixture();
    let args = ["--config", f.to_str().unwrap(), "differentials"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);

    let c = run(&["--config", f.to_str().unwrap(), "--seed", "7", "differentials"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn flags_override_config() {
    let (code, v) = run_fixture(&["--seed", "11", "--max-word-length", "7", "validate"]);
    assert_eq!(code, 0);
    assert_eq!(v["seed"], 11);
    assert_eq!(v["truncation"]["max_word_length"], 7);
    let (_, base) = run_fixture(&["validate"]);
    assert_ne!(base["config_hash"], v["config_hash"]);
}

#[test]
fn differentials_report_shape() {
    let (code, v) = run_fixture(&["differentials", "--at", "0.1+0.2i, 2.5-0.1i"]);
    assert_eq!(code, 0);
    assert!(is_complex(&v["omega"]));
    assert!(is_complex(&v["s"]));
    assert_eq!(v["nu"].as_array().unwrap().len(), 2);
    assert!(v["nu"].as_array().unwrap().iter().all(is_complex));
    let tau = v["tau"].as_array().unwrap();
    assert_eq!(tau.len(), 2);
    assert!(tau.iter().flat_map(|r| r.as_array().unwrap()).all(is_complex));
    assert_eq!(v["x"], serde_json::json!([0.1, 0.2]));
    for r in v["residuals"].as_object().unwrap().values() {
        assert!(r.as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn period_matrix_cross_check() {
    let (code, v) = run_fixture(&["period-matrix"]);
    assert_eq!(code, 0);
    assert!(v["im_omega_min_eig"].as_f64().unwrap() > 0.0);
    assert!(v["residuals"]["quadrature_gap"].as_f64().unwrap() < 1e-8);
    assert_eq!(v["index_set"], serde_json::json!([[1, 1], [1, 2], [2, 2]]));
}

#[test]
fn virasoro_npoint_n2() {
    let (code, v) = run_fixture(&[
        "virasoro-npoint",
        "--n",
        "2",
        "--c",
        "1",
        "--points",
        "0.1+0.2i, 2.5-0.1i",
        "--theta",
        "lattice:sqrt2",
    ]);
    assert_eq!(code, 0);
    assert!(is_complex(&v["G_n"]));
    assert_eq!(v["graph_count"], 7);
    assert_eq!(v["per_graph"].as_array().unwrap().len(), 7);
}

#[test]
fn polynomial_supplier_needs_c() {
    let poly = r#"poly:[{"coeff":[1,0],"vars":[[1,1],[2,2]]}]"#;
    let (code, _) = run_fixture(&["virasoro-npoint", "--n", "1", "--theta", poly]);
    assert_eq!(code, 2);
    let (code, v) = run_fixture(&["virasoro-npoint", "--n", "1", "--c", "0", "--theta", poly]);
    assert_eq!(code, 0);
    assert_eq!(v["graph_count"], 2);
}

#[test]
fn recursion_check_passes() {
    let (code, v) = run_fixture(&["recursion-check", "--n", "0"]);
    assert_eq!(code, 0);
    assert!(v["residuals"]["recursion"].as_f64().unwrap() < 1e-4);
}

#[test]
fn modular_check_summary() {
    let (code, v) = run_fixture(&["modular-check", "--g", "2", "--samples", "3", "--n", "1", "--c", "1"]);
    assert_eq!(code, 0);
    assert_eq!(v["per_sample"].as_array().unwrap().len(), 3);
    let s = &v["summary"]["automorphy"];
    assert!(s["median"].as_f64().unwrap() <= s["max"].as_f64().unwrap());
    let (code, _) = run_fixture(&["modular-check", "--g", "3", "--samples", "1"]);
    assert_eq!(code, 2);
}

#[test]
fn output_flag_writes_file() {
    let out = std::env::temp_dir().join(format!("schottky-vir-{}-out.json", std::process::id()));
    let o = run(&["graphs", "--n", "1", "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["count"], 2);
    std::fs::remove_file(out).ok();
}

#[test]
fn malformed_config_exit_2() {
    let p = tmp("malformed.json", "{\"genus\": 2");
    let o = run(&["--config", p.to_str().unwrap(), "validate"]);
    assert_eq!(o.status.code(), Some(2));

    let p = tmp(
        "overlap.json",
        r#"{"genus":2,"handles":[{"w":[-3,0],"w_neg":[-1,0],"rho":[2,0]},{"w":[1,0],"w_neg":[3,0],"rho":[0.02,0]}]}"#,
    );
    let o = run(&["--config", p.to_str().unwrap(), "validate"]);
    assert_eq!(o.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["valid"], false);

    let o = run(&["period-matrix"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_guard_exit_3() {
    let (code, v) = run_fixture(&["differentials", "--at", "6,6"]);
    assert_eq!(code, 3);
    assert!(v["error"].as_str().unwrap().contains("pole"));
}

#[test]
fn residual_failure_exit_1() {
    let (code, v) = run_fixture(&[
        "--fd-step",
        "0.2",
        "--fd-order",
        "2",
        "check-identities",
        "--frame",
        "bers",
    ]);
    assert_eq!(code, 1);
    assert_eq!(v["ok"], false);
    assert!(!v["failed"].as_array().unwrap().is_empty());
}

#[test]
fn check_identities_both_frames() {
    let (code, v) = run_fixture(&["check-identities"]);
    assert_eq!(code, 0);
    for k in ["rauch", "nabla_nu", "nabla_omega", "nabla_s", "frame_agreement"] {
        assert!(v["residuals"][k].as_f64().unwrap() < 1e-6, "{k}");
    }
}
