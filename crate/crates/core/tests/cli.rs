use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn phasetop(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_phasetop"));
    cmd.args(args).env_remove("PHASETOP_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SPIN_HALF: &str = r#"{"model": {"type": "RotorSpin", "two_j": 1}, "grid": [16, 32]}"#;
const KRAMERS: &str = r#"{"model": {"type": "KramersPairSphere"}, "grid": [16, 32]}"#;

fn assert_invariant_report(g: &Value) {
    for key in [
        "rank",
        "c_plaquette",
        "c_winding",
        "census_zeros",
        "domain_retries",
    ] {
        assert!(g[key].is_i64() || g[key].is_u64(), "{key}: {}", g[key]);
    }
    for key in ["parity_ok", "km_relation_ok", "consistent"] {
        assert!(g[key].is_boolean(), "{key}");
    }
    for key in ["k", "k_census", "census_signs_uniform"] {
        assert!(g.get(key).is_some(), "{key} missing");
    }
    assert!(g["min_gap"].is_f64());
    assert_eq!(g["bands"].as_array().map(Vec::len), Some(2));
    for key in [
        "frame_orthonormality",
        "seam_mismatch",
        "transition_unitarity",
        "transition_symmetry",
        "curvature_evenness",
    ] {
        assert!(g["residuals"][key].is_number(), "residuals.{key}");
    }
    assert!(g["grid"]["n_lat"].is_u64() && g["grid"]["refined"].is_boolean());
}

#[test]
fn analyze_report_has_schema_and_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "spin.json", SPIN_HALF);
    let out = phasetop(&["analyze", "--config", s(&cfg)], &[]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["schema_version"], "1.0");
    assert_eq!(r["command"], "analyze");
    assert_eq!(r["status"], "ok");
    assert_eq!(r["config"]["grid"], serde_json::json!([16, 32]));
    assert!(r.get("timing_seconds").is_none());
    let groups = r["result"]["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 2);
    let mut cs: Vec<i64> = groups
        .iter()
        .map(|g| g["c_plaquette"].as_i64().unwrap())
        .collect();
    cs.sort();
    assert_eq!(cs, [-1, 1]);
    for g in groups {
        assert_invariant_report(g);
        assert_eq!(g["parity_ok"], true);
    }
    assert_eq!(r["result"]["chern_sum"], 0);
}

#[test]
fn out_flag_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "k.json", KRAMERS);
    let report_path = dir.path().join("report.json");
    let dumps = dir.path().join("dumps");
    let out = phasetop(
        &[
            "analyze",
            "--config",
            s(&cfg),
            "--out",
            s(&report_path),
            "--dump",
            s(&dumps),
            "--grid",
            "16x32",
        ],
        &[],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(r["status"], "ok");

    let curvature = fs::read_to_string(dumps.join("curvature_0-1.csv")).unwrap();
    let mut lines = curvature.lines();
    assert_eq!(lines.next(), Some("lat,lon,flux"));
    let total: f64 = lines
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!(
        (total / std::f64::consts::TAU - 2.0).abs() < 1e-9,
        "{total}"
    );

    let pf = fs::read_to_string(dumps.join("pfaffian_0-1.csv")).unwrap();
    assert_eq!(pf.lines().next(), Some("vertex,lat,lon,abs_pf"));
    let census = fs::read_to_string(dumps.join("census_0-1.csv")).unwrap();
    assert_eq!(census.lines().next(), Some("plaquette,lat,lon,index"));
    let index_sum: i64 = census
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<i64>().unwrap())
        .sum();
    assert_eq!(index_sum, 1);
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "r.json",
        r#"{"model": {"type": "RandomTri", "manifold": "sphere", "n_a": 4, "seed": 1}, "grid": [16, 32]}"#,
    );
    let args = ["analyze", "--config", s(&cfg), "--seed", "9"];
    let a = phasetop(&args, &[]);
    let b = phasetop(&args, &[("PHASETOP_THREADS", "1")]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(report(&a)["config"]["seed"], 9);
}

#[test]
fn controls_exit_three_with_tri_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"model": {"type": "TriBrokenControl", "base": {"type": "RotorSpin", "two_j": 1}, "breaking_strength": 0.3},
            "grid": [16, 32]}"#,
    );
    let out = phasetop(&["analyze", "--config", s(&cfg)], &[]);
    assert_eq!(out.status.code(), Some(3));
    let r = report(&out);
    assert_eq!(r["status"], "numerical-failure");
    assert_eq!(r["result"]["control"], true);
    assert_eq!(r["result"]["tri"]["pass"], false);
    assert!(r["result"]["groups"].as_array().unwrap().is_empty());
    for b in r["result"]["broken"].as_array().unwrap() {
        assert_eq!(b["evenness_ok"], false);
    }
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(
        phasetop(&["analyze", "--config", s(&missing)], &[])
            .status
            .code(),
        Some(2)
    );

    let unknown = write_config(
        dir.path(),
        "u.json",
        r#"{"model": {"type": "RotorSpin", "two_j": 1}, "gird": [8, 8]}"#,
    );
    let out = phasetop(&["analyze", "--config", s(&unknown)], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(report(&out)["status"], "config-error");

    let odd = write_config(
        dir.path(),
        "o.json",
        r#"{"model": {"type": "RotorSpin", "two_j": 1}, "grid": [15, 32]}"#,
    );
    assert_eq!(
        phasetop(&["analyze", "--config", s(&odd)], &[])
            .status
            .code(),
        Some(2)
    );

    assert_eq!(
        phasetop(&["random-suite", "--steps", "0"], &[])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        phasetop(&["analyze", "--grid", "32"], &[]).status.code(),
        Some(2)
    );
    assert_eq!(phasetop(&["frobnicate"], &[]).status.code(), Some(2));

    let good = write_config(dir.path(), "g.json", SPIN_HALF);
    for bad in ["0", "many"] {
        let out = phasetop(
            &["analyze", "--config", s(&good)],
            &[("PHASETOP_THREADS", bad)],
        );
        assert_eq!(out.status.code(), Some(2), "PHASETOP_THREADS={bad}");
    }
    assert_eq!(
        phasetop(
            &["analyze", "--config", s(&good)],
            &[("PHASETOP_THREADS", "2")]
        )
        .status
        .code(),
        Some(0)
    );
}

#[test]
fn random_suite_tallies() {
    let out = phasetop(
        &[
            "random-suite",
            "--steps",
            "3",
            "--grid",
            "16x32",
            "--seed",
            "4",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    let t = &r["result"]["tally"];
    assert_eq!(t["models"], 3);
    assert_eq!(t["parity_ok"], t["groups"]);
    assert_eq!(t["km_relation_ok"], t["even_rank_groups"]);
    assert_eq!(r["result"]["first_seed"], 4);
    assert_eq!(r["result"]["all_hold"], true);
}

#[test]
fn deform_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.json", SPIN_HALF);
    let b = write_config(
        dir.path(),
        "b.json",
        r#"{"model": {"type": "RotorSpin", "two_j": 1, "epsilon": 0.2, "seed": 5}, "grid": [16, 32]}"#,
    );
    let out = phasetop(
        &[
            "deform",
            "--config",
            s(&a),
            "--config",
            s(&b),
            "--steps",
            "5",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["result"]["path"]["verdict"], "GAPPED-CONSTANT-C");
    assert_eq!(r["result"]["path"]["samples"].as_array().unwrap().len(), 5);

    let k = write_config(
        dir.path(),
        "k.json",
        &KRAMERS.replace("}, \"grid\"", "}, \"bands\": [0, 1], \"grid\""),
    );
    let flat = write_config(
        dir.path(),
        "f.json",
        r#"{"model": {"type": "ConstantTri", "manifold": "sphere", "n_a": 4}, "grid": [16, 32]}"#,
    );
    let out = phasetop(&["deform", "--config", s(&k), "--config", s(&flat)], &[]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["status"], "expected-failure");
    assert_eq!(r["result"]["path"]["verdict"], "GAP-CLOSES");

    assert_eq!(
        phasetop(&["deform", "--config", s(&a)], &[]).status.code(),
        Some(2)
    );
}

#[test]
fn gauge_demo_obstruction_is_expected_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "k.json", KRAMERS);
    let out = phasetop(&["gauge-demo", "--config", s(&cfg)], &[]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["status"], "ok");
    assert_eq!(r["result"]["obstruction"], 0);
    assert_eq!(r["result"]["sphere"]["extension"]["success"], true);
    assert!(
        r["result"]["sphere"]["extension"]["normal_form_residual"]
            .as_f64()
            .unwrap()
            < 1e-6
    );

    let off = write_config(
        dir.path(),
        "off.json",
        &KRAMERS.replace("}, \"grid\"", "}, \"target_c\": 4, \"grid\""),
    );
    let out = phasetop(&["gauge-demo", "--config", s(&off)], &[]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["status"], "expected-failure");
    assert_eq!(r["result"]["obstruction"], 1);
    assert_eq!(r["result"]["extendable"], false);

    let parity = write_config(
        dir.path(),
        "p.json",
        &KRAMERS.replace("}, \"grid\"", "}, \"target_c\": 3, \"grid\""),
    );
    assert_eq!(
        phasetop(&["gauge-demo", "--config", s(&parity)], &[])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn gauge_demo_on_the_torus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "t.json",
        r#"{"model": {"type": "TorusDoubledChern", "mass": 1.0}, "grid": [16, 32]}"#,
    );
    let out = phasetop(&["gauge-demo", "--config", s(&cfg), "--timing"], &[]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert!(r["timing_seconds"].is_f64());
    let t = &r["result"]["torus"];
    assert!(t["congruence_residual"].as_f64().unwrap() <= 1e-8);
    assert_eq!(t["bookkeeping_ok"], true);
}
