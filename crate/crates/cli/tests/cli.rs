use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use delaysynth::fixtures::scalar;
use delaysynth::model::save_system;
use serde_json::{Map, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_delaysynth"));
    c.env_remove("DELAYSYNTH_SOLVER");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json_stdout(o: &Output) -> Value {
    assert_eq!(code(o), 0, "stderr: {}", stderr(o));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn assert_manifest(v: &Value, command: &str) {
    let m = &v["manifest"];
    assert_eq!(m["command"], command);
    for key in ["input", "input_sha256", "config", "version", "solver", "started_at", "wall_clock_seconds"] {
        assert!(!m[key].is_null(), "manifest lacks `{key}`: {m}");
    }
    assert_eq!(m["input_sha256"].as_str().unwrap().len(), 64);
}

/// Manifest embedded in the first line of a CSV, gnuplot or SDPA file.
fn comment_manifest(text: &str) -> Value {
    let first = text.lines().next().unwrap();
    let (_, json) = first.split_once("manifest: ").expect("manifest comment line");
    serde_json::from_str(json).unwrap()
}

fn small_system(dir: &Path) -> PathBuf {
    let path = dir.join("small.json");
    save_system(&scalar(0.5, -0.3, 1.0, 0.2), &path).unwrap();
    path
}

/// Replaces every scalar by its type name, keeping keys and array lengths.
fn shape(v: &Value) -> Value {
    match v {
        Value::Null => "null".into(),
        Value::Bool(_) => "bool".into(),
        Value::Number(_) => "number".into(),
        Value::String(_) => "string".into(),
        Value::Array(a) => Value::Array(a.iter().map(shape).collect()),
        Value::Object(o) => {
            let mut out = Map::new();
            for (k, x) in o {
                // the resolved configuration mirrors the flags and is checked separately
                out.insert(k.clone(), if k == "config" { "object".into() } else { shape(x) });
            }
            Value::Object(out)
        }
    }
}

fn check_golden(name: &str, v: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.json"));
    let got = serde_json::to_string_pretty(&shape(v)).unwrap() + "\n";
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &got).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden {}; run with UPDATE_GOLDEN=1", path.display()));
    assert!(got == want, "structure of `{name}` differs from {}", path.display());
}

#[test]
fn validate_builtin() {
    let v = json_stdout(&run(&["validate", "paper-s4"]));
    assert_manifest(&v, "validate");
    assert_eq!(v["valid"], true);
    assert_eq!(v["manifest"]["input"], "paper-s4");
    check_golden("validate", &v);
}

#[test]
fn validate_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_system(dir.path());
    let mut v = read_json(&path);
    v["delays"] = serde_json::json!([-1.0]);
    std::fs::write(&path, v.to_string()).unwrap();
    let o = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_manifest(&v, "validate");
    assert_eq!(v["valid"], false);
    assert_eq!(v["violations"][0]["field"], "delays[0]");
    // other commands refuse the file
    assert_eq!(code(&run(&["inspect", path.to_str().unwrap()])), 1);
}

#[test]
fn dimension_error_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_system(dir.path());
    let mut v = read_json(&path);
    v["A"][1] = serde_json::json!([[1.0, 0.0], [0.0, 1.0]]);
    std::fs::write(&path, v.to_string()).unwrap();
    let o = run(&["synth2", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("A_1"), "{}", stderr(&o));
}

#[test]
fn schema_error_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_system(dir.path());
    let mut v = read_json(&path);
    v["dimensions"]["n"] = "one".into();
    std::fs::write(&path, v.to_string()).unwrap();
    let o = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("dimensions.n"), "{}", stderr(&o));
}

#[test]
fn unknown_input_and_bad_flags_exit_1() {
    assert_eq!(code(&run(&["validate", "no-such-system"])), 1);
    assert_eq!(code(&run(&["spectrum", "paper-s4", "--gain", "1,2,3"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn missing_solver_backend_exits_2() {
    let o = bin().args(["synth2", "paper-s4"]).env("DELAYSYNTH_SOLVER", "sdpt3").output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sdpt3"));
    assert_eq!(code(&run(&["analyze", "paper-s4", "--gain", "-1.5,-2", "--solver", "mosek"])), 2);
}

#[test]
fn gram_and_inspect_structure() {
    let v = json_stdout(&run(&["gram", "paper-s4"]));
    assert_manifest(&v, "gram");
    assert_eq!(v["intervals"].as_array().unwrap().len(), 2);
    assert_eq!(v["manifest"]["config"]["command"]["rel_tol"], 1e-12);
    check_golden("gram", &v);

    let v = json_stdout(&run(&["inspect", "paper-s4"]));
    assert_manifest(&v, "inspect");
    assert_eq!(v["dimensions"]["beta"], 17);
    let names: Vec<&str> = v["columns"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["x", "x(t-r_1)", "x(t-r_2)", "xi_1", "xi_2", "e_1", "e_2", "w"]);
    check_golden("inspect", &v);
}

#[test]
fn builtin_dual_synthesis_structure() {
    let v = json_stdout(&run(&["synth2", "paper-s4"]));
    assert_manifest(&v, "synth2");
    assert_eq!(v["result"]["mode"], "dual");
    assert!(v["result"]["gamma"].as_f64().unwrap() > 0.0);
    assert_eq!(v["manifest"]["config"]["command"]["alphas"].as_array().unwrap().len(), 17);
    check_golden("synth2", &v);
}

#[test]
fn builtin_spectrum_structure() {
    let v = json_stdout(&run(&["spectrum", "paper-s4", "--gain", "-1.581,-1.9805", "--refine", "false"]));
    assert_manifest(&v, "spectrum");
    let sa = v["sa"].as_f64().unwrap();
    assert!((-0.78..=-0.66).contains(&sa), "{sa}");
    assert_eq!(v["eigenvalues"].as_array().unwrap().len(), 10);
    check_golden("spectrum", &v);
}

#[test]
fn analysis_outputs_embed_manifests_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let sys = small_system(dir.path());
    let out = |name: &str| dir.path().join(name);
    let args = |json: &str, csv: &str, sdpa: &str| {
        vec![
            "analyze".to_string(),
            sys.to_str().unwrap().into(),
            "--gain".into(),
            "-2".into(),
            "--out".into(),
            out(json).to_str().unwrap().into(),
            "--csv".into(),
            out(csv).to_str().unwrap().into(),
            "--export-sdpa".into(),
            out(sdpa).to_str().unwrap().into(),
        ]
    };
    for (j, c, s) in [("a.json", "a.csv", "a.sdpa"), ("b.json", "b.csv", "b.sdpa")] {
        let o = bin().args(args(j, c, s)).output().unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = read_json(&out("a.json"));
    assert_manifest(&a, "analyze");
    assert_eq!(a["result"]["mode"], "analysis");
    assert!(a["result"].get("seconds").is_none());
    let csv = std::fs::read_to_string(out("a.csv")).unwrap();
    assert_eq!(comment_manifest(&csv)["command"], "analyze");
    assert!(csv.lines().nth(1).unwrap().starts_with("step,gamma,delta_y,delta_k,status,dissipation_max_eig,k_1_1"));
    let sdpa = std::fs::read_to_string(out("a.sdpa")).unwrap();
    assert!(sdpa.starts_with("* manifest: "));
    assert_eq!(comment_manifest(&sdpa)["input_sha256"], a["manifest"]["input_sha256"]);

    // same inputs and configuration: identical numeric output
    let b = read_json(&out("b.json"));
    assert_eq!(a["result"], b["result"]);
    assert_eq!(a["manifest"]["config"]["command"]["gain"], b["manifest"]["config"]["command"]["gain"]);
    assert_eq!(a["manifest"]["config"]["solver"], b["manifest"]["config"]["solver"]);
    assert_eq!(a["manifest"]["input_sha256"], b["manifest"]["input_sha256"]);
}

#[test]
fn synthesis_on_a_small_system() {
    let dir = tempfile::tempdir().unwrap();
    let sys = small_system(dir.path());
    let res = dir.path().join("dual.json");
    let o = run(&["synth2", sys.to_str().unwrap(), "--alpha", "5", "-o", res.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dual = read_json(&res);
    let g_dual = dual["result"]["gamma"].as_f64().unwrap();

    // the dual result file seeds the iteration
    let v = json_stdout(&run(&["iterate", sys.to_str().unwrap(), "--gain", res.to_str().unwrap(), "--max-iter", "2"]));
    assert_manifest(&v, "iterate");
    assert_eq!(v["result"]["mode"], "iterative");
    assert_eq!(v["manifest"]["config"]["command"]["iteration"]["max_iter"], 2);
    let gammas: Vec<f64> = v["result"]["trace"].as_array().unwrap().iter().filter_map(|t| t["gamma"].as_f64()).collect();
    assert!(gammas.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{gammas:?}");
    assert!(*gammas.last().unwrap() <= g_dual + 1e-6);

    assert_eq!(code(&run(&["iterate", sys.to_str().unwrap(), "--eps", "0"])), 1);
}

#[test]
fn simulation_csv_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("traj.csv");
    let gp = dir.path().join("traj.gp");
    let o = run(&[
        "simulate",
        "paper-s4",
        "--gain",
        "-1.581,-1.9805",
        "--t-end",
        "1",
        "--history",
        "5,3",
        "--glitch",
        "builtin:paper",
        "-o",
        csv.to_str().unwrap(),
        "--plot",
        gp.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let m = comment_manifest(&text);
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config"]["command"]["simulation"]["glitch"]["kernel"], "B");
    let mut lines = text.lines().skip(1);
    assert_eq!(lines.next().unwrap(), "t,x_1,x_2,u_1,z_1,z_2,w_1");
    // history from −1.7 plus one second at h = 0.002
    assert_eq!(lines.count(), 851 + 500);
    let script = std::fs::read_to_string(&gp).unwrap();
    assert_eq!(comment_manifest(&script)["command"], "simulate");
    assert!(script.contains("plot for [i=2:3]") && script.contains(&csv.display().to_string()));

    assert_eq!(code(&run(&["simulate", "paper-s4", "--gain", "-1,-2", "--plot", "x.gp"])), 1);
    assert_eq!(code(&run(&["simulate", "paper-s4", "--gain", "-1,-2", "--step", "0.003"])), 1);
}

#[test]
fn reproduction_report_and_sim_gating() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let skip = dir.path().join("skip");
    let common = ["--max-iter", "1", "--t-end", "11"];
    let o = bin().args(["reproduce-paper", "--outdir", full.to_str().unwrap()]).args(common).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = bin().args(["reproduce-paper", "--skip-sim", "--outdir", skip.to_str().unwrap()]).args(common).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let rf = read_json(&full.join("report.json"));
    let rs = read_json(&skip.join("report.json"));
    assert_manifest(&rf, "reproduce-paper");
    let rows = |v: &Value, sim: bool| -> Vec<Value> {
        v["rows"].as_array().unwrap().iter().filter(|r| (r["stage"] == "simulation") == sim).cloned().collect()
    };
    assert!(!rows(&rf, true).is_empty());
    assert!(rows(&rs, true).is_empty());
    assert_eq!(rows(&rf, false), rows(&rs, false));
    assert!(rows(&rs, false).iter().any(|r| r["quantity"] == "min gamma" && r["target"] == 0.8986));
    assert!(rf["stages"].as_array().unwrap().iter().all(|s| s["ok"] == true));

    for name in ["dual.json", "iterate-lambda1.json", "iterate-lambda2.json"] {
        assert_manifest(&read_json(&full.join(name)), "reproduce-paper");
    }
    for name in ["iterate-lambda1.csv", "iterate-lambda2.csv", "trajectory.csv", "trajectory.gp"] {
        let text = std::fs::read_to_string(full.join(name)).unwrap();
        assert_eq!(comment_manifest(&text)["command"], "reproduce-paper", "{name}");
    }
    assert!(!skip.join("trajectory.csv").exists());
    let md = std::fs::read_to_string(full.join("report.md")).unwrap();
    assert!(md.contains("| stage | quantity | computed | target | tolerance | result | note |"));
}
