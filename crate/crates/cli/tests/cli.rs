use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use sensmpc::mpc::{ClosedLoopRun, Warmstart};
use sensmpc_cli::config::ScenarioConfig;
use sensmpc_cli::output::emit_plot_data;
use sensmpc_cli::runner;
use sensmpc_cli::scenario::{Scenario, ScenarioKind};
use sensmpc_cli::CliError;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sensmpc"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const LQ: &str = r#"{
  "schema": 1, "scenario": "lq_smoke", "modes": ["semiderivative", "shift"],
  "N": 10, "x0": [3.0, 0.0], "sim_steps": 40, "epsilon": 1e-8, "seed": 7
}"#;

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].clone()).collect()
}

#[test]
fn missing_field_is_reported_with_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"schema": 1, "scenario": "lq_smoke", "x0": [1.0, 0.0], "sim_steps": 5, "epsilon": 1e-6}"#,
    );
    let out = bin()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing field `N`"), "{stderr}");
}

#[test]
fn unknown_fields_and_bad_values_are_rejected() {
    let origin = Path::new("inline.json");
    let err = ScenarioConfig::from_json(
        &LQ.replace("\"seed\": 7", "\"seed\": 7, \"horizon\": 3"),
        origin,
    )
    .unwrap_err();
    assert!(err.to_string().contains("unknown field `horizon`"), "{err}");
    assert_eq!(err.exit_code(), 1);

    for (from, to, field) in [
        ("\"schema\": 1", "\"schema\": 2", "schema"),
        ("\"lq_smoke\"", "\"quadcopter\"", "scenario"),
        ("\"shift\"]", "\"warp\"]", "modes"),
        ("[3.0, 0.0]", "[3.0]", "x0"),
        ("\"sim_steps\": 40", "\"sim_steps\": 0", "sim_steps"),
        ("\"epsilon\": 1e-8", "\"epsilon\": -1.0", "epsilon"),
        ("\"N\": 10", "\"N\": 0", "`N`"),
    ] {
        let err = ScenarioConfig::from_json(&LQ.replace(from, to), origin).unwrap_err();
        assert!(matches!(err, CliError::Config { .. }));
        assert!(err.to_string().contains(field), "{field}: {err}");
    }
}

#[test]
fn lq_run_writes_consistent_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lq.json", LQ);
    let out_dir = dir.path().join("out");
    let status = bin()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));

    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("lq_smoke_summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["seed"], 7);
    let mut grids = Vec::new();
    for mode in ["semiderivative", "shift"] {
        let (h, rows) = read_csv(&out_dir.join(format!("lq_smoke_{mode}_steps.csv")));
        let iters: Vec<usize> = column(&h, &rows, "corrector_iterations")
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(iters.len(), 40);
        // Linear-quadratic problems need at most one corrector step.
        assert!(iters.iter().all(|&i| i <= 1), "{mode}: {iters:?}");
        let entry = summary["modes"]
            .as_array()
            .unwrap()
            .iter()
            .find(|m| m["mode"] == mode)
            .unwrap();
        assert_eq!(
            entry["total_corrector_iterations"].as_u64().unwrap() as usize,
            iters.iter().sum::<usize>()
        );
        assert!(entry["aborted"].is_null());

        let (h, rows) = read_csv(&out_dir.join(format!("lq_smoke_{mode}_trajectory.csv")));
        assert_eq!(h, ["time", "x1", "x2", "u"]);
        assert_eq!(rows.len(), 41);
        // 17 significant digits.
        assert!(
            rows[1][0].starts_with("1.0000000000000001e-1")
                || rows[1][0].starts_with("1.0000000000000000e-1")
        );
        grids.push(column(&h, &rows, "time"));
    }
    assert_eq!(grids[0], grids[1]);
}

#[test]
fn reruns_reproduce_non_timing_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lq.json", LQ);
    for sub in ["a", "b"] {
        let status = bin()
            .arg("run")
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(sub))
            .output()
            .unwrap()
            .status;
        assert!(status.success());
    }
    for mode in ["semiderivative", "shift"] {
        let traj = format!("lq_smoke_{mode}_trajectory.csv");
        assert_eq!(
            std::fs::read(dir.path().join("a").join(&traj)).unwrap(),
            std::fs::read(dir.path().join("b").join(&traj)).unwrap()
        );
        let steps = format!("lq_smoke_{mode}_steps.csv");
        let (ha, ra) = read_csv(&dir.path().join("a").join(&steps));
        let (_, rb) = read_csv(&dir.path().join("b").join(&steps));
        for name in [
            "k",
            "time",
            "corrector_iterations",
            "warm_residual",
            "residual",
            "constraint_violation",
        ] {
            assert_eq!(column(&ha, &ra, name), column(&ha, &rb, name), "{name}");
        }
    }
}

#[test]
fn modes_flag_and_env_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lq.json", LQ);
    let env_out = dir.path().join("from_env");
    let status = bin()
        .arg("run")
        .arg(&cfg)
        .args(["--modes", "cold"])
        .env("SENSMPC_OUT", &env_out)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(env_out.join("lq_smoke_cold_steps.csv").exists());
    assert!(!env_out.join("lq_smoke_shift_steps.csv").exists());
}

#[test]
fn uav_plot_series_contract() {
    let mut cfg = ScenarioConfig::from_json(
        &std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/configs/uav_default.json"
        ))
        .unwrap(),
        Path::new("uav_default.json"),
    )
    .unwrap();
    cfg.horizon = 6;
    cfg.sim_steps = 4;
    cfg.modes = vec!["semiderivative".into(), "shift".into()];
    let dir = tempfile::tempdir().unwrap();
    let outcome = runner::run(&cfg, dir.path()).unwrap();
    assert_eq!(outcome.exit_code(), 0);

    let mut grids = Vec::new();
    for mode in ["semiderivative", "shift"] {
        let (h, rows) = read_csv(&dir.path().join(format!("uav_default_{mode}_plot.csv")));
        assert_eq!(h, ["time", "series", "value"]);
        let series: BTreeSet<String> = column(&h, &rows, "series").into_iter().collect();
        for s in [
            "p1",
            "p2",
            "p3",
            "v1",
            "v2",
            "v3",
            "T",
            "tau1",
            "tau2",
            "tau3",
            "iterations",
            "runtime",
        ] {
            assert!(series.contains(s), "missing series {s}");
        }
        // Thrust is written in physical units.
        let thrust: Vec<f64> = rows
            .iter()
            .filter(|r| r[1] == "T")
            .map(|r| r[2].parse().unwrap())
            .collect();
        assert!(
            thrust
                .iter()
                .all(|t| (18.0 - 1e-9..=22.0 + 1e-9).contains(t)),
            "{thrust:?}"
        );
        let times: BTreeSet<String> = rows
            .iter()
            .filter(|r| r[1] == "p1")
            .map(|r| r[0].clone())
            .collect();
        grids.push(times);
    }
    assert_eq!(grids[0], grids[1]);
}

#[test]
fn plot_data_needs_logs() {
    let scenario = Scenario::build(ScenarioKind::LqSmoke, 3).unwrap();
    let run = ClosedLoopRun {
        warmstart: Warmstart::Shift,
        initial_iterations: 0,
        initial_residual: 0.0,
        initial_time: 0.0,
        states: vec![],
        inputs: vec![],
        logs: vec![],
        aborted: None,
    };
    let dir = tempfile::tempdir().unwrap();
    let err = emit_plot_data(&dir.path().join("plot.csv"), &scenario, &run).unwrap_err();
    assert!(matches!(err, CliError::EmptyLog(_)));
}

#[test]
fn check_command_passes_on_builtin_configs() {
    for name in ["uav_default", "lq_smoke", "licq_dup"] {
        let path = format!("{}/configs/{name}.json", env!("CARGO_MANIFEST_DIR"));
        let out = bin()
            .arg("check")
            .arg(&path)
            .args(["--seed", "3"])
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{name}: {}",
            String::from_utf8_lossy(&out.stdout)
        );
    }
}
