//! End-to-end runs of the `lerw` binary: exit codes, config layering, CSV
//! headers and JSON artifacts validated against the shipped schemas.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn lerw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lerw")).args(args).env_remove("LERW_WORKERS").output().expect("spawn lerw")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

fn validate(schema_file: &str, instance: &Value) {
    let text = std::fs::read_to_string(schema_dir().join(schema_file)).expect("schema file");
    let schema: Value = serde_json::from_str(&text).expect("schema is JSON");
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{schema_file}: {errors:?}");
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("artifact")).expect("artifact is JSON")
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).expect("csv").lines().next().unwrap_or_default().to_string()
}

/// Runs `args` into a fresh directory and validates every JSON artifact.
fn run_into(dir: &Path, args: &[&str]) {
    let mut full: Vec<&str> = args.to_vec();
    let d = dir.to_str().unwrap();
    full.extend(["--seed", "1", "--workers", "2", "--out", d]);
    let o = lerw(&full);
    assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    let manifest = read_json(&dir.join("manifest.json"));
    validate("manifest.schema.json", &manifest);
    validate("config.schema.json", &manifest["config"]);
    for f in manifest["outputs"].as_array().unwrap() {
        let f = f.as_str().unwrap();
        if let Some(stem) = f.strip_suffix(".json") {
            if stem != "manifest" {
                validate(&format!("{stem}.schema.json"), &read_json(&dir.join(f)));
            }
        }
    }
}

#[test]
fn every_command_writes_schema_valid_artifacts_with_fixed_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let at = |s: &str| tmp.path().join(s);

    run_into(&at("es"), &["es", "--n", "4", "--trials", "500"]);
    run_into(&at("es2"), &["es", "--kind", "two-scale", "--m", "2", "--n", "8", "--trials", "300"]);
    run_into(&at("star"), &["es", "--kind", "star", "--n", "4", "--trials", "300"]);
    run_into(&at("joint"), &["es", "--kind", "joint", "--n", "2", "--R", "4", "--trials", "300"]);
    run_into(&at("fit"), &["es-fit", "--grid", "2,4,8,16", "--trials", "300"]);
    run_into(&at("growth"), &["growth", "--grid", "4,8,16,32", "--trials", "200"]);
    run_into(&at("box"), &["boxcount", "--epsilon", "1/8", "--n", "32", "--trials", "50"]);
    run_into(&at("two"), &["twobox", "--x", "3,0,0", "--y", "-4,0,0", "--epsilon", "0.125", "--n", "32", "--trials", "50"]);
    run_into(&at("energy"), &["energy", "--k", "2,3", "--n", "32", "--beta", "1.6", "--trials", "20", "--es-trials", "300"]);
    run_into(&at("tail"), &["tail", "--epsilon", "1/8", "--n", "32", "--trials", "50"]);
    run_into(&at("verify"), &["verify", "--suite", "reversal"]);
    run_into(&at("oracle"), &["oracle", "--query", "exit", "--radius", "2", "--x", "0,0,1"]);

    assert_eq!(first_line(&at("fit/es-fit.csv")), "n,trials,successes,value,stderr");
    assert_eq!(first_line(&at("growth/growth.csv")), "n,trials,mean_M,stderr,es_value,ratio_M_over_n2Es");
    assert_eq!(first_line(&at("box/boxcount.csv")), "trial,J");
    assert_eq!(first_line(&at("energy/energy.csv")), "k,mean_energy,stderr,mean_mass");
    assert_eq!(first_line(&at("tail/tail.csv")), "c,survival");
    let rows = std::fs::read_to_string(at("box/boxcount.csv")).unwrap().lines().count();
    assert_eq!(rows, 51);
}

#[test]
fn stdout_carries_the_primary_artifact_without_out_dir() {
    let o = lerw(&["es", "--n", "1", "--trials", "1000", "--seed", "4"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    validate("es.schema.json", &v);
    assert_eq!(v["kind"], "plain");
    assert_eq!(v["trials"], 1000);
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [
        &[][..],
        &["frobnicate"],
        &["es", "--n", "not-a-number"],
        &["es", "--n", "4", "--trials", "0"],
        &["es", "--n", "4", "--workers", "0"],
        &["es", "--kind", "two-scale", "--m", "9", "--n", "4"],
        &["twobox", "--x", "3,0,0", "--y", "3,0,0", "--epsilon", "1/8", "--n", "32"],
        &["twobox", "--x", "0,0,0", "--y", "3,0,0", "--epsilon", "1/8", "--n", "32"],
        &["boxcount", "--epsilon", "1/8", "--n", "8"],
        &["energy", "--beta", "3.5", "--delta", "0.2", "--k", "2", "--n", "32"],
        &["verify", "--suite", "nonsense"],
        &["es", "--config", "/nonexistent/config.json"],
    ] {
        let o = lerw(args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn help_and_version_exit_with_zero() {
    assert_eq!(code(&lerw(&["--help"])), 0);
    assert_eq!(code(&lerw(&["--version"])), 0);
    assert_eq!(code(&lerw(&["tail", "--help"])), 0);
}

#[test]
fn unwritable_output_is_a_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = lerw(&["es", "--n", "2", "--trials", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"command": "es", "seed": 3, "n": 4, "trials": 700}"#).unwrap();
    let c = cfg.to_str().unwrap();

    let o = lerw(&["es", "--config", c, "--n", "8"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!((v["n"].as_f64(), v["trials"].as_u64(), v["master_seed"].as_u64()), (Some(8.0), Some(700), Some(3)));

    // a config for another command, or with unknown keys, is rejected
    assert_eq!(code(&lerw(&["growth", "--config", c])), 2);
    std::fs::write(&cfg, r#"{"command": "es", "n": 4, "colour": "blue"}"#).unwrap();
    assert_eq!(code(&lerw(&["es", "--config", c])), 2);
}

#[test]
fn worker_count_comes_from_environment_without_changing_results() {
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_lerw"));
        cmd.args(["growth", "--grid", "4,8,16,32", "--trials", "300", "--seed", "9"]).args(extra);
        match env {
            Some(w) => cmd.env("LERW_WORKERS", w),
            None => cmd.env_remove("LERW_WORKERS"),
        };
        let o = cmd.output().unwrap();
        assert!(o.status.success());
        o.stdout
    };
    let a = run(Some("3"), &[]);
    let b = run(None, &["--workers", "1"]);
    let c = run(Some("5"), &["--workers", "2"]);
    assert_eq!(a, b);
    assert_eq!(b, c);
}
