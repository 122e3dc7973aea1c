use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn iocl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iocl"))
        .args(args)
        .env("IOCL_LOG", "error")
        .output()
        .expect("spawn iocl")
}

fn ok(args: &[&str]) -> Output {
    let out = iocl(args);
    assert!(
        out.status.success(),
        "iocl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn base_config() -> Value {
    json!({
        "schema_version": "iocl-experiment-v1",
        "scenario": "infinite_a",
        "system": {"preset": "rotation"},
        "noise": {"w0": {"identity": 1.0}, "w": {"identity": 1.0}, "v": {"identity": 0.01}},
        "sizes": {"n": 4, "T": 30, "N": 20},
        "seed": 5,
        "em": {"init": "moment", "max_iter": 40, "tol": 1e-9},
        "recovery": {"method": "iterative", "knowns": ["B", "R", "Q"]}
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn column(rows: &[Vec<String>], idx: usize) -> Vec<f64> {
    rows.iter().map(|r| r[idx].parse().unwrap()).collect()
}

struct Run {
    _tmp: TempDir,
    config: String,
    out: PathBuf,
}

fn setup(cfg: &Value) -> Run {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "config.json", cfg);
    let out = tmp.path().join("out");
    Run { _tmp: tmp, config, out }
}

impl Run {
    fn out_str(&self) -> &str {
        self.out.to_str().unwrap()
    }
}

#[test]
fn simulate_writes_one_row_per_observation() {
    let run = setup(&base_config());
    let stdout = ok(&["simulate", "--config", &run.config, "--out", run.out_str()]).stdout;
    assert!(String::from_utf8(stdout).unwrap().trim().ends_with("dataset.jsonl"));
    let text = fs::read_to_string(run.out.join("dataset.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 20);
    let rows: usize = lines
        .iter()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["y"].as_array().unwrap().len())
        .sum();
    assert_eq!(rows, 20 * 31);
    let meta = read_json(&run.out.join("dataset.meta.json"));
    assert_eq!(meta["steps"], 30);
    assert_eq!(meta["seed"], 5);
}

#[test]
fn same_seed_gives_identical_files_and_seed_flag_overrides() {
    let run = setup(&base_config());
    let a = run.out.join("a");
    let b = run.out.join("b");
    let c = run.out.join("c");
    ok(&["simulate", "--config", &run.config, "--out", a.to_str().unwrap()]);
    ok(&["--threads", "1", "simulate", "--config", &run.config, "--out", b.to_str().unwrap()]);
    ok(&["simulate", "--config", &run.config, "--out", c.to_str().unwrap(), "--seed", "6"]);
    for file in ["dataset.jsonl", "dataset.meta.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    assert_ne!(fs::read(a.join("dataset.jsonl")).unwrap(), fs::read(c.join("dataset.jsonl")).unwrap());
}

#[test]
fn non_stabilizable_system_exits_with_validation_code() {
    let mut cfg = base_config();
    cfg["system"] = json!({
        "a": [[2.0, 0.0], [0.0, 0.5]],
        "b": [[0.0], [1.0]],
        "q": {"identity": 1.0},
        "r": [[1.0]]
    });
    cfg["sizes"] = json!({"T": 10, "N": 2});
    let run = setup(&cfg);
    let out = iocl(&["simulate", "--config", &run.config, "--out", run.out_str()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not stabilizable"));
    assert!(!run.out.join("dataset.jsonl").exists());
}

#[test]
fn validation_errors_name_the_field() {
    let mut cfg = base_config();
    cfg["noise"]["v"] = json!([[1.0, 0.0], [0.0, 1.0]]);
    let run = setup(&cfg);
    let out = iocl(&["simulate", "--config", &run.config, "--out", run.out_str()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("noise.v: expected 4x4"));

    let mut cfg = base_config();
    cfg["sizes"]["N"] = json!(-1);
    let run = setup(&cfg);
    let out = iocl(&["simulate", "--config", &run.config]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sizes.N"));
}

#[test]
fn missing_knowns_list_supported_combinations() {
    let mut cfg = base_config();
    cfg["recovery"] = json!({"method": "iterative"});
    let run = setup(&cfg);
    let out = iocl(&["all", "--config", &run.config, "--out", run.out_str()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("recovery.knowns"), "{stderr}");
    assert!(stderr.contains("[B, Q, R]") && stderr.contains("[A, B, R]") && stderr.contains("[A, Q]"), "{stderr}");
    assert!(!run.out.exists(), "nothing runs before validation");
}

#[test]
fn fit_trace_has_one_row_per_evaluation_and_is_deterministic() {
    let run = setup(&base_config());
    ok(&["simulate", "--config", &run.config, "--out", run.out_str()]);
    ok(&["fit", "--config", &run.config, "--out", run.out_str()]);
    let report = read_json(&run.out.join("fit.json"));
    let iterations = report["fit"]["iterations"].as_u64().unwrap() as usize;
    let (header, rows) = read_csv(&run.out.join("loglik.csv"));
    assert_eq!(header, ["iteration", "loglik"]);
    assert_eq!(rows.len(), iterations + 1);
    let ll = column(&rows, 1);
    assert!(ll.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
    assert!(report["f_relative_error"].as_f64().unwrap().is_finite());

    let first = fs::read(run.out.join("fit.json")).unwrap();
    ok(&["fit", "--config", &run.config, "--out", run.out_str()]);
    assert_eq!(first, fs::read(run.out.join("fit.json")).unwrap());
}

#[test]
fn staged_run_matches_all_and_writes_a_trace() {
    let mut cfg = base_config();
    cfg["recovery"]["sweep"] = json!({"target": "f", "eps": [1e-6, 1e-3, 1e-1]});
    let run = setup(&cfg);
    let staged = run.out.join("staged");
    let joint = run.out.join("joint");
    let s = staged.to_str().unwrap();
    ok(&["simulate", "--config", &run.config, "--out", s]);
    ok(&["fit", "--config", &run.config, "--out", s]);
    ok(&["recover", "--config", &run.config, "--out", s]);
    ok(&["all", "--config", &run.config, "--out", joint.to_str().unwrap()]);
    for file in ["dataset.jsonl", "fit.json", "loglik.csv", "recovery.json", "recovery_trace.csv", "recovery_sweep.csv"] {
        assert_eq!(fs::read(staged.join(file)).unwrap(), fs::read(joint.join(file)).unwrap(), "{file}");
    }
    let report = read_json(&staged.join("recovery.json"));
    assert_eq!(report["plan"], "a_given_brq");
    assert_eq!(report["result"]["estimates"]["A"].as_array().unwrap().len(), 4);
    assert!(report["relative_errors"]["A"].as_f64().unwrap().is_finite());
    let (header, rows) = read_csv(&staged.join("recovery_trace.csv"));
    assert_eq!(header, ["iteration", "step_norm", "error_2norm"]);
    assert_eq!(rows.len(), report["result"]["iterations"].as_u64().unwrap() as usize + 1);
    let (_, sweep) = read_csv(&staged.join("recovery_sweep.csv"));
    assert_eq!(column(&sweep, 0), [1e-6, 1e-3, 1e-1]);
}

#[test]
fn exact_closed_loop_gives_exact_recovery() {
    // Zero EM iterations from the truth keep the generating closed loop.
    let cases = [
        (json!({"knowns": ["A", "B", "R"]}), "q_given_abr", "Q"),
        (json!({"knowns": ["A", "Q"]}), "control_weight_given_aq", "BRinvBt"),
        (json!({"method": "rootfind", "knowns": ["B", "R", "Q"]}), "a_given_brq", "A"),
    ];
    for (recovery, plan, estimate) in cases {
        let mut cfg = base_config();
        cfg["em"] = json!({"init": "truth", "max_iter": 0});
        cfg["recovery"] = recovery;
        let run = setup(&cfg);
        ok(&["all", "--config", &run.config, "--out", run.out_str()]);
        assert_eq!(read_json(&run.out.join("fit.json"))["fit"]["iterations"], 0);
        let rec = read_json(&run.out.join("recovery.json"));
        assert_eq!(rec["plan"], plan);
        let err = rec["relative_errors"][estimate].as_f64().unwrap();
        assert!(err < 1e-8, "{plan}: {err}");
    }
}

#[test]
fn finite_scenario_reports_a_and_q() {
    let cfg = json!({
        "schema_version": "iocl-experiment-v1",
        "scenario": "finite",
        "system": {"a": [[1.1, 0.2], [0.0, 0.9]], "b": {"identity": 1.0}, "q": [[0.5, 0.1], [0.1, 0.4]], "r": {"identity": 1.0}},
        "noise": {"w0": {"identity": 1.0}, "w": {"identity": 0.1}, "v": {"identity": 0.01}},
        "sizes": {"T": 8, "N": 200},
        "seed": 3,
        "em": {"init": "truth", "max_iter": 20},
        "recovery": {"knowns": ["B", "R"]}
    });
    let run = setup(&cfg);
    ok(&["all", "--config", &run.config, "--out", run.out_str()]);
    let rec = read_json(&run.out.join("recovery.json"));
    assert_eq!(rec["plan"], "finite_aq");
    for name in ["A", "Q"] {
        assert_eq!(rec["result"]["estimates"][name].as_array().unwrap().len(), 2, "{name}");
        assert!(rec["relative_errors"][name].as_f64().unwrap().is_finite(), "{name}");
    }
    let fit = read_json(&run.out.join("fit.json"));
    assert_eq!(fit["fit"]["params"]["f"].as_array().unwrap().len(), 8);
}

#[test]
fn control_observation_scenario_recovers_a() {
    let cfg = json!({
        "schema_version": "iocl-experiment-v1",
        "scenario": "infinite_b",
        "system": {"a": [[1.0, 0.3], [-0.2, 0.95]], "b": {"identity": 1.0}, "q": {"identity": 1.0}, "r": {"identity": 1.0}},
        "noise": {"w0": {"identity": 0.1}, "w": {"identity": 0.1}, "v_x": {"identity": 0.1}, "v_u": {"identity": 0.1}},
        "sizes": {"T": 50, "N": 100},
        "em": {"max_iter": 200},
        "recovery": {"knowns": ["B", "R"]}
    });
    let run = setup(&cfg);
    ok(&["all", "--config", &run.config, "--out", run.out_str()]);
    let rec = read_json(&run.out.join("recovery.json"));
    assert_eq!(rec["plan"], "aq_from_controls");
    assert!(rec["relative_errors"]["A"].as_f64().unwrap() < 0.1, "{}", rec["relative_errors"]);
    assert!(rec["relative_errors"]["Q"].as_f64().unwrap().is_finite());
}

#[test]
fn matrices_can_come_from_files() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("a.json"), "[[0.9, 0.1], [0.0, 0.8]]").unwrap();
    fs::write(
        tmp.path().join("system.json"),
        r#"{"a": {"file": "a.json"}, "b": [[1.0], [0.5]], "q": {"identity": 1.0}, "r": [[2.0]]}"#,
    )
    .unwrap();
    let mut cfg = base_config();
    cfg["system"] = json!({"file": "system.json"});
    cfg["sizes"] = json!({"n": 2, "m": 1, "T": 5, "N": 3});
    cfg["em"] = json!({});
    let config = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("out");
    ok(&["simulate", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(read_json(&out.join("dataset.meta.json"))["dims"], json!({"n": 2, "m": 1, "d": 2}));
}

#[test]
fn fig3a_error_column_strictly_decreases() {
    let tmp = TempDir::new().unwrap();
    ok(&["figure", "fig3a", "--out", tmp.path().to_str().unwrap()]);
    let dir = tmp.path().join("fig3a");
    let (header, rows) = read_csv(&dir.join("error_vs_iteration.csv"));
    assert_eq!(header[1], "error_2norm");
    let err = column(&rows, 1);
    assert!(err.len() > 3 && err.len() <= 51);
    assert!(err.windows(2).all(|w| w[1] < w[0]), "{err:?}");
    assert!(*err.last().unwrap() <= 1e-9);
    let readme = fs::read_to_string(dir.join("README.md")).unwrap();
    assert!(readme.contains("error_vs_iteration.csv") && readme.contains("rootfind_residual.csv"));
}

#[test]
fn fig2a_reports_true_and_estimated_closed_loop() {
    let tmp = TempDir::new().unwrap();
    ok(&["figure", "fig2a", "--out", tmp.path().to_str().unwrap()]);
    let dir = tmp.path().join("fig2a");
    let (header, rows) = read_csv(&dir.join("f_ss.csv"));
    assert_eq!(header, ["row", "col", "true", "estimated"]);
    assert_eq!(rows.len(), 16);
    let truth = column(&rows, 2);
    let est = column(&rows, 3);
    let num: f64 = truth.iter().zip(&est).map(|(t, e)| (t - e).powi(2)).sum();
    let den: f64 = truth.iter().map(|t| t * t).sum();
    assert!((num / den).sqrt() < 0.1);
    assert!(fs::read_to_string(dir.join("README.md")).unwrap().contains("f_ss.csv"));
}

#[test]
fn unknown_figure_is_a_usage_error() {
    let out = iocl(&["figure", "fig9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fig3cd"));
}
