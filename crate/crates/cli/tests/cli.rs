use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fibre-transport"));
    cmd.args(args).env_remove("FIBRE_TRANSPORT_OUT");
    if let Some(dir) = out {
        cmd.arg("--out").arg(dir);
    }
    cmd.output().expect("binary runs")
}

fn run_config(command: &str, config: &Path, out: &Path) -> (i32, Value) {
    let o = run(&[command, "--config", config.to_str().unwrap()], Some(out));
    let code = o.status.code().expect("exit code");
    assert!(code != 2, "{}", String::from_utf8_lossy(&o.stderr));
    let json = std::fs::read_to_string(out.join(format!("{command}.json"))).unwrap();
    (code, serde_json::from_str(&json).unwrap())
}

fn criterion(n: u32) -> PathBuf {
    configs().join(format!("criterion-{n}.toml"))
}

fn entry<'a>(report: &'a Value, id: &str) -> &'a Value {
    report["entries"].as_array().unwrap().iter().find(|e| e["id"] == id).unwrap_or_else(|| panic!("no entry {id}"))
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const FLAT: &str = r#"
seed = 1

[[backends]]
backend = "identity"
bundle = { base = "euclidean", dim = 2, fiber = { kind = "vector", rank = 2 } }

[[paths]]
kind = "analytic"
formula = "line"
domain = [0.0, 1.0]
origin = [0.0, 0.0]
direction = [1.0, 1.0]
"#;

#[test]
fn criterion_configs_give_their_documented_exit_codes() {
    let cases = [
        (1, "check", 0),
        (2, "factorize", 0),
        (3, "factorize", 0),
        (4, "check", 0),
        (5, "check", 1),
        (6, "holonomy", 0),
        (7, "reconstruct-horizontal", 0),
        (8, "reconstruct-horizontal", 0),
    ];
    for (n, command, expected) in cases {
        let dir = tempfile::tempdir().unwrap();
        let (code, report) = run_config(command, &criterion(n), dir.path());
        assert_eq!(code, expected, "criterion {n}");
        assert_eq!(report["pass"], expected == 0);
        assert!(dir.path().join(format!("{command}.csv")).exists());
    }
}

#[test]
fn finite_families_meet_the_instance_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (_, two) = run_config("factorize", &criterion(2), dir.path());
    assert!(two["entries"].as_array().unwrap().len() >= 100);
    let (_, three) = run_config("factorize", &criterion(3), dir.path());
    let entries = three["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 50);
    for e in entries {
        let gauge = e["reports"].as_array().unwrap().iter().find(|r| r["law"] == "gauge").unwrap();
        assert_eq!(gauge["max_residual"], 0.0);
    }
}

#[test]
fn parametric_backend_fails_reparametrization_with_witnesses() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = run_config("check", &criterion(5), dir.path());
    assert_eq!(code, 1);
    for e in report["entries"].as_array().unwrap() {
        let id = e["id"].as_str().unwrap();
        assert_eq!(e["pass"], id.starts_with("pointwise"), "{id}");
    }
    let reparam = entry(&report, "parametric/path-0")["reports"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["law"] == "reparametrization")
        .unwrap();
    assert_eq!(reparam["pass"], false);
    assert!(!reparam["witnesses"].as_array().unwrap().is_empty());
    let axiom = entry(&report, "parametric/axioms")["reports"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["law"] == "axiom-reparametrization")
        .unwrap();
    assert!(!axiom["witnesses"].as_array().unwrap().is_empty());
}

#[test]
fn reports_are_byte_identical_across_runs() {
    for (command, config) in [("factorize", criterion(2)), ("reconstruct-horizontal", criterion(7))] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_config(command, &config, a.path());
        run_config(command, &config, b.path());
        for entry in std::fs::read_dir(a.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let x = std::fs::read(a.path().join(&name)).unwrap();
            let y = std::fs::read(b.path().join(&name)).unwrap();
            assert!(x == y, "{name:?} differs between runs");
        }
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(&["factorize", "--config", criterion(3).to_str().unwrap(), "--seed", "99"], None);
    assert_eq!(a.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(report["seed"], 99);
    let (_, default) = run_config("factorize", &criterion(3), dir.path());
    assert_ne!(report["entries"][0]["data"], default["entries"][0]["data"]);
}

#[test]
fn empty_grid_is_rejected_before_any_check_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &format!("{FLAT}\n[check]\ngrid = 0\n"));
    let out = dir.path().join("out");
    let o = run(&["check", "--config", cfg.to_str().unwrap()], Some(&out));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    let line = FLAT.lines().count() + 3;
    assert!(err.contains("check.grid") && err.contains(&format!("line {line}")), "{err}");
    assert!(!out.exists());
}

#[test]
fn config_errors_name_the_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "typo.toml", &FLAT.replace("origin", "orgin"));
    let o = run(&["check", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("typo.toml") && err.contains("line"), "{err}");

    let cfg = write(dir.path(), "index.toml", &FLAT.replace("backend = \"identity\"", "backend = \"identity\"\npaths = [3]"));
    let o = run(&["check", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("backends[0].paths"));
}

#[test]
fn transport_examples_match_their_expected_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = run_config("transport", &configs().join("transport.toml"), dir.path());
    assert_eq!(code, 0);
    let flat = entry(&report, "tuple-00/flat/path-0");
    assert_eq!(flat["data"]["output"], flat["data"]["input"]);
    let sphere = entry(&report, "tuple-02/connection-s2/path-1");
    assert!(sphere["metrics"][0]["value"].as_f64().unwrap() < 1e-6);
    let csv = std::fs::read_to_string(dir.path().join("transport-elements.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn anchor_sweep_prints_tables_and_passes_gauge_checks() {
    let dir = tempfile::tempdir().unwrap();
    let (code, report) = run_config("factorize", &configs().join("factorize-sweep.toml"), dir.path());
    assert_eq!(code, 0);
    let finite = entry(&report, "finite/path-0");
    assert_eq!(finite["data"]["anchors"].as_array().unwrap().len(), 5);
    assert_eq!(finite["data"]["anchors"][0]["round-trip"], 0.0);
    assert!(finite["data"]["anchors"][0]["tables"].is_array());
    let ode = entry(&report, "connection-u1/path-0");
    for r in ode["reports"].as_array().unwrap() {
        assert!(r["max_residual"].as_f64().unwrap() < 1e-9, "{r}");
    }
    let tables = std::fs::read_to_string(dir.path().join("factorize-tables.csv")).unwrap();
    assert!(tables.lines().count() > 1);
}

#[test]
fn output_directory_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "flat.toml", FLAT);
    let o = Command::new(env!("CARGO_BIN_EXE_fibre-transport"))
        .args(["check", "--config", cfg.to_str().unwrap()])
        .env("FIBRE_TRANSPORT_OUT", dir.path().join("env-out"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    assert!(dir.path().join("env-out/check.json").exists());
}

#[test]
fn timings_appear_only_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "flat.toml", FLAT);
    let plain: Value = serde_json::from_slice(&run(&["check", "--config", cfg.to_str().unwrap()], None).stdout).unwrap();
    assert!(plain.get("timings").is_none());
    let timed: Value =
        serde_json::from_slice(&run(&["check", "--timings", "--config", cfg.to_str().unwrap()], None).stdout).unwrap();
    assert!(timed["timings"].is_object());
}

#[test]
fn tolerance_flag_can_force_a_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "u1.toml",
        &FLAT.replace("origin = [0.0, 0.0]", "origin = [0.5, 0.0]").replace(
            "backend = \"identity\"\nbundle = { base = \"euclidean\", dim = 2, fiber = { kind = \"vector\", rank = 2 } }",
            "backend = \"connection\"\nconnection = { connection = \"principal\", group = \"u1\", base_dim = 2, form = \"symmetric-gauge\", strength = 1.0 }",
        ),
    );
    let ok = run(&["check", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let strict = run(&["check", "--config", cfg.to_str().unwrap(), "--tol", "1e-300"], None);
    assert_eq!(strict.status.code(), Some(1));
}
