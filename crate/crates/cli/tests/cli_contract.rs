//! End-to-end pipeline contract: artifact shapes, ordering, determinism
//! across reruns and thread counts, and binary exit codes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};

use magnetorbit::config::parse_config;
use magnetorbit::pipeline::run_pipeline;

fn cubic_model() -> Value {
    json!({
        "lattice": [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
        "harmonics": [
            {"k": [1, 0, 0], "amplitude": 1.0},
            {"k": [0, 1, 0], "amplitude": 1.0},
            {"k": [0, 0, 1], "amplitude": 1.0}
        ],
        "fermi": 2.5
    })
}

fn run(cfg_json: &Value, out: &Path, threads: usize) -> magnetorbit::pipeline::RunManifest {
    let cfg = parse_config(&cfg_json.to_string()).expect("config parses");
    run_pipeline(&cfg, out, threads, false).expect("pipeline runs")
}

fn read_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .expect("artifact exists")
        .lines()
        .map(str::to_string)
        .collect()
}

/// Everything except the manifest, whose wall times vary run to run.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("output dir") {
        let entry = entry.unwrap();
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == "manifest.json" {
            continue;
        }
        map.insert(name, fs::read(entry.path()).unwrap());
    }
    map
}

#[test]
fn trace_mode_emits_contracted_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "mode": "trace",
        "model": cubic_model(),
        "field": {"b_hat": [0, 0, 1]},
        "trace": {"s_max": 30.0, "branches": 2, "window_cells": 2.5, "grid_n": 96, "singular_grid": 16}
    });
    let manifest = run(&cfg, dir.path(), 1);

    let lines = read_lines(&dir.path().join("trajectories.csv"));
    assert_eq!(lines[0], "s,px,py,pz,branch_id");
    assert!(lines.len() > 10);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first.len(), 5);
    assert_eq!(first[4], "0");
    assert!(lines.last().unwrap().ends_with(",1"), "second branch present");

    let singular: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("singular_points.json")).unwrap())
            .unwrap();
    assert_eq!(singular["schema_version"], 1);
    assert!(singular["points"].is_array());

    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("config.json").exists());
    assert!(manifest.artifacts.iter().any(|a| a == "trajectories.csv"));
    let reparsed = parse_config(&fs::read_to_string(dir.path().join("config.json")).unwrap())
        .expect("emitted config parses");
    assert_eq!(reparsed, parse_config(&cfg.to_string()).unwrap());
}

#[test]
fn classify_mode_reports_closed_orbits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "mode": "classify",
        "model": cubic_model(),
        "field": {"b_hat": [0, 0, 1]},
        "trace": {"branches": 2, "window_cells": 2.5, "grid_n": 96},
        "classify": {"arc_cells": 40.0}
    });
    run(&cfg, dir.path(), 1);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("classification.json")).unwrap())
            .unwrap();
    let entries = report["trajectories"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    for e in entries {
        assert_eq!(e["kind"], "closed", "entry {e}");
        assert!(e["residuals"]["period"].is_number());
        assert!(e["trace_length"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn conductivity_mode_emits_curve_and_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "mode": "conductivity",
        "model": cubic_model(),
        "field": {"b_hat": [0, 0, 1]},
        "transport": {
            "lambdas": [5.0, 10.0],
            "n_slices": 4, "span_cells": 4, "grid_n": 64,
            "s_chunk": 16.0, "max_chunks": 16
        }
    });
    run(&cfg, dir.path(), 1);
    let lines = read_lines(&dir.path().join("conductivity.csv"));
    assert_eq!(lines[0], "lambda,sxx,sxy,sxz,syx,syy,syz,szx,szy,szz");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("5,"));
    assert!(lines[2].starts_with("10,"));
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), 10);
        for field in line.split(',') {
            field.parse::<f64>().expect("numeric cell");
        }
    }

    let slopes: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("slopes.json")).unwrap())
            .unwrap();
    let comps = slopes["components"].as_array().unwrap();
    assert_eq!(comps.len(), 9);
    assert_eq!(comps[0]["component"], "xx");
    assert!(comps[0]["envelope"]["slope"].is_number());
}

#[test]
fn scan_mode_emits_one_row_per_direction_in_grid_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "mode": "scan",
        "model": cubic_model(),
        "field": {"grid_resolution": 12},
        "scan": {"arc_cells": 30.0, "n_slices": 2, "branches_per_slice": 2, "grid_n": 48}
    });
    run(&cfg, dir.path(), 1);
    let lines = read_lines(&dir.path().join("diagram.csv"));
    assert_eq!(lines[0], "theta,phi,regime,m1,m2,m3,rationality");
    assert_eq!(lines.len(), 1 + 12);
    let grid = magnetorbit_core::angular::direction_grid::<f64>(12);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert!((first[0].parse::<f64>().unwrap() - grid.points[0].z.acos()).abs() < 1e-12);
}

#[test]
fn scan_is_thread_count_invariant() {
    let cfg = json!({
        "mode": "scan",
        "model": cubic_model(),
        "field": {"grid_resolution": 8},
        "scan": {"arc_cells": 25.0, "n_slices": 2, "branches_per_slice": 1, "grid_n": 48}
    });
    let d1 = tempfile::tempdir().unwrap();
    let d3 = tempfile::tempdir().unwrap();
    run(&cfg, d1.path(), 1);
    run(&cfg, d3.path(), 3);
    assert_eq!(snapshot(d1.path()), snapshot(d3.path()));
}

#[test]
fn conductivity_rerun_is_byte_identical() {
    let cfg = json!({
        "mode": "conductivity",
        "model": cubic_model(),
        "field": {"b_hat": [0, 0, 1]},
        "rng_seed": 7,
        "transport": {
            "lambdas": [4.0, 8.0],
            "n_slices": 3, "span_cells": 4, "grid_n": 48,
            "s_chunk": 16.0, "max_chunks": 8
        }
    });
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    run(&cfg, d1.path(), 1);
    run(&cfg, d2.path(), 1);
    let (s1, s2) = (snapshot(d1.path()), snapshot(d2.path()));
    assert!(s1.contains_key("conductivity.csv"));
    assert_eq!(s1, s2);
}

#[test]
fn quasi_mode_traces_and_tests_strips() {
    let dir = tempfile::tempdir().unwrap();
    // Single planar harmonic: f = cos(x), straight vertical level lines.
    let cfg = json!({
        "mode": "quasi",
        "quasiperiodic": {
            "covectors": [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]],
            "offset": [0.0, 0.0, 0.0],
            "harmonics": [{"k": [1, 0, 0], "amplitude": 1.0}],
            "level": 0.3
        },
        "quasi": {"seeds": [[1.2661036727794992, 0.0]], "l_max": 700.0}
    });
    run(&cfg, dir.path(), 1);

    let lines = read_lines(&dir.path().join("quasi_lines.csv"));
    assert_eq!(lines[0], "s,px,py,pz,branch_id");
    assert!(lines.len() > 100);
    assert!(lines[1].ends_with(",0,0"), "pz is zero: {}", lines[1]);

    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("quasi_report.json")).unwrap())
            .unwrap();
    let entry = &report["lines"].as_array().unwrap()[0];
    assert_eq!(entry["stop"], "budget");
    assert_eq!(entry["strip"]["passes"], true);
    assert!(entry["mu"].is_null(), "three periods give no quadruple");
}

#[test]
fn binary_exit_codes_follow_the_contract() {
    let bin = env!("CARGO_BIN_EXE_magnetorbit");
    let dir = tempfile::tempdir().unwrap();

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"mode": "trace", "taus": [1.0]}"#).unwrap();
    let status = Command::new(bin)
        .args(["trace", "--config"])
        .arg(&bad)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2), "schema error exits 2");

    let good = dir.path().join("good.json");
    let cfg = json!({
        "mode": "trace",
        "model": cubic_model(),
        "field": {"b_hat": [0, 0, 1]},
        "trace": {"s_max": 5.0, "branches": 1, "grid_n": 48, "singular_grid": 8}
    });
    fs::write(&good, cfg.to_string()).unwrap();

    let status = Command::new(bin)
        .args(["classify", "--config"])
        .arg(&good)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2), "mode mismatch exits 2");

    let out = dir.path().join("out");
    let status = Command::new(bin)
        .args(["trace", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0), "clean run exits 0");
    assert!(out.join("trajectories.csv").exists());

    // Seed far off the surface: a numerical failure, not a schema one.
    let off = dir.path().join("off.json");
    let mut bad_seed = cfg.clone();
    bad_seed["trace"]["seeds"] = json!([[9.9, 9.9]]);
    fs::write(&off, bad_seed.to_string()).unwrap();
    let status = Command::new(bin)
        .args(["trace", "--config"])
        .arg(&off)
        .arg("--out")
        .arg(dir.path().join("out2"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3), "numerical failure exits 3");
}
