use std::path::{Path, PathBuf};

use kneesight::reliability::FIT_TABLE_COLUMNS;
use kneesight_cli::artifacts;
use kneesight_cli::table::Table;
use kneesight_cli::{run, EXIT_OK, EXIT_VALIDATION};

fn kneesight(out: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["kneesight".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.extend(["--out".to_string(), out.display().to_string()]);
    run(argv)
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, json).unwrap();
    path
}

const SMALL: &str = r#"{"seed": 9, "synth": {"populations": [{"n_cells": 24, "dataset_tag": "a"}, {"n_cells": 16, "dataset_tag": "b"}]},
  "stats": {"bootstrap": 100}}"#;

#[test]
fn one_knee_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    for cmd in ["synth", "features", "knee"] {
        assert_eq!(kneesight(dir.path(), &[cmd, "--config", cfg]), EXIT_OK, "{cmd}");
    }
    let cells = Table::read(&dir.path().join(artifacts::CELLS)).unwrap();
    let knees = Table::read(&dir.path().join(artifacts::KNEES)).unwrap();
    assert_eq!(cells.len(), 40);
    assert_eq!(knees.len(), 40);
    let id = |t: &Table| -> Vec<String> {
        let c = t.column("cell_id").unwrap();
        t.rows.iter().map(|r| r[c].clone()).collect()
    };
    assert_eq!(id(&cells), id(&knees));
}

#[test]
fn weibull_lifetimes_refit_with_the_fit_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kneesight(dir.path(), &["synth", "--weibull", "--seed", "4"]), EXIT_OK);
    assert_eq!(kneesight(dir.path(), &["reliability"]), EXIT_OK);
    let t = Table::read(&dir.path().join(artifacts::LIFETIME_FIT_BY_DATASET)).unwrap();
    assert_eq!(t.header, FIT_TABLE_COLUMNS);
    assert_eq!(t.len(), 1);
    let shape: f64 = t.rows[0][t.column("weibull_c").unwrap()].parse().unwrap();
    let scale: f64 = t.rows[0][t.column("weibull_scale").unwrap()].parse().unwrap();
    // 222 draws: sampling error of the shape estimate is about 5%
    assert!((shape / 2.353 - 1.0).abs() < 0.15, "{shape}");
    assert!((scale / 16.509 - 1.0).abs() < 0.05, "{scale}");
    let global = Table::read(&dir.path().join(artifacts::LIFETIME_FIT_GLOBAL)).unwrap();
    assert_eq!(global.header, &FIT_TABLE_COLUMNS[1..]);
}

#[test]
fn bad_invocations_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kneesight(dir.path(), &["frobnicate"]), EXIT_VALIDATION);
    assert_eq!(kneesight(dir.path(), &["predict", "--n-early", "7"]), EXIT_VALIDATION);
    assert_eq!(kneesight(dir.path(), &["reliability", "--family", "gamma"]), EXIT_VALIDATION);
    assert_eq!(kneesight(dir.path(), &["synth", "--jobs", "0"]), EXIT_VALIDATION);
    let cfg = write_config(dir.path(), r#"{"sed": 1}"#);
    assert_eq!(
        kneesight(dir.path(), &["synth", "--config", cfg.to_str().unwrap()]),
        EXIT_VALIDATION
    );
    assert_eq!(run(["kneesight", "--help"]), EXIT_OK);
}

#[test]
fn missing_upstream_artifact_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in [
        "features",
        "knee",
        "reliability",
        "stats",
        "predict",
        "xeval",
        "cluster",
        "fit-inr",
        "report",
    ] {
        assert_eq!(kneesight(dir.path(), &[cmd]), EXIT_VALIDATION, "{cmd}");
    }
    // stats needs the knee table as well as the cycles
    assert_eq!(kneesight(dir.path(), &["synth"]), EXIT_OK);
    assert_eq!(kneesight(dir.path(), &["stats"]), EXIT_VALIDATION);
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    let mut outputs = Vec::new();
    for jobs in ["1", "3"] {
        let out = dir.path().join(format!("jobs{jobs}"));
        for cmd in ["synth", "knee", "stats", "cluster", "xeval"] {
            assert_eq!(kneesight(&out, &[cmd, "--config", cfg, "--jobs", jobs]), EXIT_OK, "{cmd}");
        }
        let files = [
            artifacts::CYCLES,
            artifacts::KNEES,
            artifacts::CORRELATION_CI,
            artifacts::CLUSTERS,
            artifacts::CROSS_DATASET,
        ];
        outputs.push(files.map(|f| std::fs::read(out.join(f)).unwrap()));
    }
    assert!(outputs[0] == outputs[1]);
}

#[test]
fn xeval_matrix_is_square_over_tags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    assert_eq!(kneesight(dir.path(), &["synth", "--config", cfg]), EXIT_OK);
    assert_eq!(kneesight(dir.path(), &["xeval", "--config", cfg, "--n-early", "5"]), EXIT_OK);
    let t = Table::read(&dir.path().join(artifacts::CROSS_DATASET)).unwrap();
    assert_eq!(t.header, ["train", "a", "b"]);
    assert_eq!(t.len(), 2);
    assert!(t.rows.iter().flat_map(|r| &r[1..]).all(|v| v.parse::<f64>().unwrap() > 0.0));
}

/// Two cells of constant-current cycling whose discharge shortens each cycle.
fn raw_timeseries() -> String {
    let mut csv = String::from("cell,time_s,current_a,voltage_v\n");
    for (cell, fade) in [("A", 2), ("B", 3)] {
        let mut t = 0;
        for cycle in 0..12 {
            for _ in 0..60 {
                csv.push_str(&format!("{cell},{t},1.0,4.1\n"));
                t += 60;
            }
            for s in 0..(100 - fade * cycle) {
                csv.push_str(&format!("{cell},{t},-1.0,{:.4}\n", 4.1 - 0.008 * s as f64));
                t += 60;
            }
        }
    }
    csv
}

#[test]
fn ingest_then_features() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    std::fs::write(&raw, raw_timeseries()).unwrap();
    let mapping = dir.path().join("mapping.json");
    std::fs::write(
        &mapping,
        r#"{"cell_id_col": "cell", "time_col": "time_s", "current_col": "current_a", "voltage_col": "voltage_v", "dataset_tag": "lab"}"#,
    )
    .unwrap();
    let args = ["ingest", "--input", raw.to_str().unwrap(), "--mapping", mapping.to_str().unwrap()];
    assert_eq!(kneesight(dir.path(), &args), EXIT_OK);
    let cycles = Table::read(&dir.path().join(artifacts::CYCLES)).unwrap();
    assert_eq!(cycles.len(), 24);
    let soh = cycles.column("soh").unwrap();
    let first_a: Vec<f64> = cycles.rows[..12].iter().map(|r| r[soh].parse().unwrap()).collect();
    assert_eq!(first_a[0], 1.0);
    assert!(first_a.windows(2).all(|w| w[1] < w[0]));

    assert_eq!(kneesight(dir.path(), &["features"]), EXIT_OK);
    let cells = Table::read(&dir.path().join(artifacts::CELLS)).unwrap();
    assert_eq!(cells.len(), 2);
}

#[test]
fn fit_inr_writes_models_and_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"synth": {"populations": [{"n_cells": 3}]}, "fit_inr": {"max_cells": 2}}"#,
    );
    let cfg = cfg.to_str().unwrap();
    assert_eq!(kneesight(dir.path(), &["synth", "--config", cfg]), EXIT_OK);
    assert_eq!(kneesight(dir.path(), &["fit-inr", "--config", cfg, "--variant", "rbf"]), EXIT_OK);
    let summary = Table::read(&dir.path().join("inr_rbf_summary.csv")).unwrap();
    assert_eq!(summary.len(), 2);
    let models: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("inr_rbf.json")).unwrap()).unwrap();
    assert_eq!(models.as_array().unwrap().len(), 2);
}
