use std::path::Path;
use std::process::{Command, Output};

use blockrg::cli::{parse_config, validate_text};
use serde_json::{json, Value};

fn blockrg(config: &Value, extra: &[&str], dir: &Path) -> Output {
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_string()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_blockrg"))
        .arg("--config")
        .arg(&path)
        .args(extra)
        .output()
        .unwrap()
}

fn report(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn ring(n: usize) -> Value {
    json!({"geometry": "square_1d", "extent": [n], "boundary": {"kind": "periodic"}})
}

fn torus(n: usize) -> Value {
    json!({"geometry": "square_2d", "extent": [n, n], "boundary": {"kind": "periodic"}})
}

#[test]
fn renormalize_writes_the_known_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "subcommand": "renormalize",
        "lattice": ring(16),
        "interaction": {"nearest_neighbor": {"beta": 0.5}},
        "kernel": {"kind": "decimation", "b": 2},
    });
    let out = blockrg(&cfg, &["--out", dir.path().to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["schema"], "blockrg.report/1");
    let k = rep["result"]["interaction"]["couplings"]["[[0],[1]]"].as_f64().unwrap();
    assert!((k - 0.5 * 1f64.cosh().ln()).abs() < 1e-12);
    let csv = std::fs::read_to_string(dir.path().join("couplings.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("set,value"));
    assert!(rep["cap_utilization"].is_object());
}

#[test]
fn infinite_temperature_hypothesis_reports_zero_correlations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "subcommand": "hypothesis-check",
        "lattice": ring(8),
        "interaction": {"nearest_neighbor": {"beta": 0.0}},
        "kernel": {"kind": "decimation", "b": 2},
        "seed": 5,
    });
    let rep = report(&blockrg(&cfg, &[], dir.path()));
    assert_eq!(rep["result"]["status"], "zero correlations");
    assert_eq!(rep["result"]["holds"], true);
}

#[test]
fn count_writes_catalan_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "subcommand": "count",
        "count": {"params": {"p": 2, "r": 1, "c_link": 1, "m": 2}, "n_max": 5},
    });
    let out = blockrg(&cfg, &["--out", dir.path().to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("coefficients.csv")).unwrap();
    let nums: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(nums, ["1", "2", "5", "14", "42"]);
}

#[test]
fn validation_reports_paths() {
    let no_seed = json!({
        "subcommand": "hypothesis-check",
        "lattice": ring(8),
        "interaction": {"nearest_neighbor": {"beta": 0.3}},
        "kernel": {"kind": "decimation", "b": 2},
    });
    let d = validate_text(&no_seed.to_string());
    assert!(d.iter().any(|d| d.path == "seed"), "{d:?}");

    let incommensurate = json!({
        "subcommand": "renormalize",
        "lattice": ring(15),
        "interaction": {"nearest_neighbor": {"beta": 0.3}},
        "kernel": {"kind": "decimation", "b": 2},
    });
    let d = validate_text(&incommensurate.to_string());
    assert!(d.iter().any(|d| d.path == "kernel" && d.message.contains("incommensurate")), "{d:?}");

    let unknown = json!({"subcommand": "count", "count": {"n_maxx": 3}});
    let d = validate_text(&unknown.to_string());
    assert_eq!(d.len(), 1);
    assert!(d[0].path.starts_with("count"), "{d:?}");

    let ok = json!({"subcommand": "count", "count": {"params": {"p": 2, "r": 1, "c_link": 1, "m": 2}}});
    assert!(validate_text(&ok.to_string()).is_empty());
    assert!(parse_config(&ok.to_string()).is_ok());
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    let bad = json!({"subcommand": "renormalize", "bogus": 1});
    assert_eq!(blockrg(&bad, &[], dir.path()).status.code(), Some(2));

    let capped = json!({
        "subcommand": "renormalize",
        "caps": {"max_table_width": 2},
        "lattice": torus(4),
        "interaction": {"nearest_neighbor": {"beta": 0.5}},
        "kernel": {"kind": "decimation", "b": 2},
    });
    let out = blockrg(&capped, &[], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cap"));

    let divergent = json!({
        "subcommand": "count",
        "count": {"params": {"p": 2, "r": 1, "c_link": 1, "m": 2}, "eps": 0.1},
    });
    assert_eq!(blockrg(&divergent, &[], dir.path()).status.code(), Some(4));

    let missing = Command::new(env!("CARGO_BIN_EXE_blockrg"))
        .args(["--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn validate_only_does_not_compute() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "subcommand": "renormalize",
        "caps": {"max_table_width": 2},
        "lattice": torus(4),
        "interaction": {"nearest_neighbor": {"beta": 0.5}},
        "kernel": {"kind": "decimation", "b": 2},
    });
    let out = blockrg(&cfg, &["--validate-only"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn results_do_not_depend_on_threads_and_seed_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "subcommand": "hypothesis-check",
        "lattice": torus(4),
        "interaction": {"nearest_neighbor": {"beta": 0.3}},
        "kernel": {"kind": "decimation", "b": 2},
        "seed": 1,
        "hypothesis_check": {"sigma_prime": {"mode": "sample", "count": 4}, "pair_budget": 20},
    });
    let a = report(&blockrg(&cfg, &["--threads", "1"], dir.path()));
    let b = report(&blockrg(&cfg, &["--threads", "4"], dir.path()));
    assert_eq!(a["result"], b["result"]);
    let c = report(&blockrg(&cfg, &["--seed", "1"], dir.path()));
    assert_eq!(a["result"], c["result"]);
    let d = report(&blockrg(&cfg, &["--seed", "2"], dir.path()));
    assert_eq!(d["config"]["seed"], 2);
}
