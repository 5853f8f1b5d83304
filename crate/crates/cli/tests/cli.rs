use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn sheetspace(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sheetspace"));
    cmd.args(args).env_remove("SHEETSPACE_SEED");
    if let Some(s) = seed {
        cmd.env("SHEETSPACE_SEED", s);
    }
    cmd.output().unwrap()
}

fn run(scenario: &Path, out: &Path, extra: &[&str], seed: Option<&str>) -> Output {
    let mut args = vec!["run", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    sheetspace(&args, seed)
}

fn small_scenario(dir: &Path, map: &str, checks: &str) -> PathBuf {
    let src = format!(
        r#"{{
        "name": "small",
        "metric": {{"builtin": "minkowski", "dim": 4}},
        "sheet": {{
            "params": [{{"name": "t", "samples": 12, "range": [0, 1]}}, {{"name": "s", "samples": 12, "periodic": true}}],
            "map": {map}
        }},
        "checks": {checks}
    }}"#
    );
    let path = dir.join("scenario.json");
    std::fs::write(&path, src).unwrap();
    path
}

const CHECKS: &str =
    r#"[{"name": "validate"}, {"name": "compatibility", "sweep": {"trials": 5}}, {"name": "domega"}, {"name": "levi", "points": 3}]"#;
const CYLINDER: &str = r#"["t", "cos(s)", "sin(s)", "0"]"#;

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json_without_times(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    for c in v["checks"].as_array_mut().unwrap() {
        c.as_object_mut().unwrap().remove("wall_time_s");
    }
    v
}

#[test]
fn describe_prints_dimensions() {
    let o = sheetspace(&["describe", bundled("minkowski_cylinder.json").to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("dim N = 8, CR codim = 2"), "{}", stdout(&o));
    let o = sheetspace(&["describe", bundled("euclidean_circle.json").to_str().unwrap()], None);
    assert!(stdout(&o).contains("dim N = 5, CR codim = 1"), "{}", stdout(&o));
}

#[test]
fn describe_rejects_missing_metric() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, r#"{"sheet": {"params": [], "map": []}}"#).unwrap();
    let o = sheetspace(&["describe", path.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/metric"), "{}", stderr(&o));
}

#[test]
fn bundled_minkowski_cylinder_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&bundled("minkowski_cylinder.json"), dir.path(), &["--jobs", "4"], None);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("check,param,grid,epsilon,residual,slope,pass"));
    for check in ["compatibility", "domega", "nijenhuis"] {
        assert!(csv.lines().any(|l| l.starts_with(&format!("{check},"))), "no {check} rows");
    }
    let json = json_without_times(&dir.path().join("report.json"));
    assert_eq!(json["pass"], true);
    assert_eq!(json["dim_n"], 8);
}

#[test]
fn wrong_map_arity_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let s = small_scenario(dir.path(), r#"["t", "cos(s)", "sin(s)"]"#, CHECKS);
    let o = run(&s, &dir.path().join("out"), &[], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/sheet/map"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_check_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let s = small_scenario(dir.path(), CYLINDER, r#"[{"name": "validate"}, {"name": "curvature"}]"#);
    let o = run(&s, &dir.path().join("out"), &[], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/checks/1/name"), "{}", stderr(&o));
}

#[test]
fn lightlike_sheet_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&bundled("lightlike.json"), dir.path(), &[], None);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("validate,")).unwrap();
    assert!(row.ends_with(",false"), "{row}");
    let json = json_without_times(&dir.path().join("report.json"));
    assert!(json["checks"][0]["error"].as_str().unwrap().contains("not definite"));
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let s = small_scenario(dir.path(), CYLINDER, CHECKS);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&s, &a, &["--jobs", "1"], None).status.success());
    assert!(run(&s, &b, &["--jobs", "3"], None).status.success());
    let read = |d: &Path| std::fs::read(d.join("report.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(json_without_times(&a.join("report.json")), json_without_times(&b.join("report.json")));
    // only the two reports remain, no temporary files
    let mut names: Vec<String> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["report.csv", "report.json"]);
}

#[test]
fn seed_variable_overrides_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let s = small_scenario(dir.path(), CYLINDER, CHECKS);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&s, &a, &[], None).status.success());
    assert!(run(&s, &b, &[], Some("7")).status.success());
    let (ja, jb) = (json_without_times(&a.join("report.json")), json_without_times(&b.join("report.json")));
    assert_eq!(ja["seed"], 42);
    assert_eq!(jb["seed"], 7);
    assert_eq!(jb["checks"][2]["seed"], 7);
    assert_ne!(ja["checks"][2]["rows"], jb["checks"][2]["rows"]);
    let o = run(&s, &dir.path().join("c"), &[], Some("seven"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flow_writes_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let src = r#"{
        "metric": {"builtin": "euclidean", "dim": 3},
        "sheet": {"params": [{"name": "t", "samples": 12, "range": [-1, 1]}], "map": ["t", "0.1*sin(pi*t)", "0"]},
        "checks": [{"name": "flow"}],
        "flow": {"max_steps": 40, "log_every": 10}
    }"#;
    let s = dir.path().join("flow.json");
    std::fs::write(&s, src).unwrap();
    let o = run(&s, &dir.path().join("out"), &[], None);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let traj = std::fs::read_to_string(dir.path().join("out/flow_trajectory.csv")).unwrap();
    let mut lines = traj.lines();
    assert_eq!(lines.next(), Some("step,area,grad_norm,eta,consistency"));
    let areas: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(areas.len() >= 2 && areas.windows(2).all(|w| w[1] <= w[0]), "{areas:?}");
}
