use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> String {
    root().join("fixtures").join(name).display().to_string()
}

fn kit(args: &[&str]) -> Output {
    kit_env(args, None)
}

fn kit_env(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_transience-kit"));
    cmd.args(args).env_remove("TRANSIENCE_KIT_THREADS");
    if let Some(t) = threads {
        cmd.env("TRANSIENCE_KIT_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_valid(schema: &str, doc: &Value) {
    let text = fs::read_to_string(root().join("schemas").join(format!("{schema}.json"))).unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    let validator = jsonschema::draft202012::new(&schema).expect("schema compiles");
    let errors: Vec<String> = validator
        .iter_errors(doc)
        .take(5)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{errors:?}");
}

fn temp_file(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn classify_report_validates() {
    let chain = fixture("bd_transient.json");
    let r = stdout_json(&kit(&[
        "classify", "--chain", &chain, "--A", "0", "--N", "400", "--H", "400", "--paths", "500", "--seed", "3",
    ]));
    assert_valid("report_v1", &r);
    assert_eq!(r["schema"], "report_v1");
    assert_eq!(r["transient"]["verdict"], "certified-consistent");
    assert_eq!(r["violations"].as_array().unwrap().len(), 0);
}

#[test]
fn classify_validates_across_corpus() {
    for entry in fs::read_dir(root().join("fixtures")).unwrap() {
        let path = entry.unwrap().path();
        let chain = path.display().to_string();
        let r = stdout_json(&kit(&["classify", "--chain", &chain, "--N", "60", "--H", "60"]));
        assert_valid("report_v1", &r);
        assert_valid(
            "chain",
            &serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap(),
        );
    }
}

#[test]
fn skipfree_xi_is_one_half() {
    let chain = fixture("bd_transient.json");
    let r = stdout_json(&kit(&["skipfree", "--chain", &chain, "--N", "40", "--ell", "2"]));
    assert_valid("skipfree_v1", &r);
    let xi = r["moments"]["xi"]["sup"].as_f64().unwrap();
    assert!((xi - 0.5).abs() < 1e-8, "{xi}");
    assert_eq!(r["certificate"]["certificate"]["verdict"]["status"], "holds");
}

#[test]
fn skipfree_killed_chain_reports_sigma34() {
    let chain = fixture("killed_walk.json");
    let r = stdout_json(&kit(&["skipfree", "--chain", &chain]));
    assert_valid("skipfree_v1", &r);
    assert!(r["killed"]["sigma3"]["sup"].as_f64().unwrap() <= 6.0);
}

#[test]
fn rwhl_and_simulate_validate() {
    let chain = fixture("rwhl_skewed.json");
    let r = stdout_json(&kit(&["rwhl", "--chain", &chain, "--N", "120", "--ell", "2,3"]));
    assert_valid("rwhl_v1", &r);
    assert_eq!(r["polynomial"].as_array().unwrap().len(), 2);

    let chain = fixture("bd_transient.json");
    let r = stdout_json(&kit(&[
        "simulate", "--chain", &chain, "--N", "80", "--H", "80", "--paths", "2000", "--seed", "9",
    ]));
    assert_valid("simulate_v1", &r);
    assert!(r["return_probability"]["z"].as_f64().unwrap().abs() < 4.0);
}

#[test]
fn drift_check_on_certificate_file() {
    let dir = tempfile::tempdir().unwrap();
    let w: Vec<String> = (0..20).map(|x| format!("{}", 0.5f64.powf(x as f64 / 2.0))).collect();
    let cert = temp_file(
        dir.path(),
        "cert.json",
        &format!(r#"{{"kind":"geometric","w":[{}],"lambda":0.95,"b":0.85}}"#, w.join(",")),
    );
    let chain = fixture("bd_transient.json");
    let r = stdout_json(&kit(&["drift-check", "--chain", &chain, "--cert", &cert]));
    assert_valid("drift_check_v1", &r);
    assert_eq!(r["states"], 20);
    assert_eq!(r["certificate"]["verdict"]["status"], "holds");
    let cert_in: Value = serde_json::from_str(&fs::read_to_string(&cert).unwrap()).unwrap();
    assert_valid("certificate_input", &cert_in);

    let csv = kit(&["drift-check", "--chain", &chain, "--cert", &cert, "--format", "csv"]);
    assert_eq!(csv.status.code(), Some(0));
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("x,margin\n"));
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn drift_check_rejects_size_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cert = temp_file(dir.path(), "cert.json", r#"{"kind":"strong","w":[1,1,1],"lambda":0.5}"#);
    let o = kit(&[
        "drift-check",
        "--chain",
        &fixture("finite_recurrent.json"),
        "--N",
        "3",
        "--cert",
        &cert,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cert = temp_file(dir.path(), "bad.json", r#"{"kind":"strong","w":[1,1],"lambda":0.5}"#);
    let o = kit(&[
        "drift-check",
        "--chain",
        &fixture("finite_recurrent.json"),
        "--cert",
        &cert,
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn output_is_byte_identical_across_runs_and_threads() {
    let chain = fixture("killed_walk.json");
    let args = [
        "classify", "--chain", &chain, "--N", "80", "--H", "80", "--paths", "2000", "--seed", "7",
    ];
    let a = kit_env(&args, Some("1"));
    let b = kit_env(&args, Some("4"));
    let c = kit(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);

    let sim = [
        "simulate", "--chain", &chain, "--N", "40", "--H", "40", "--paths", "3000", "--seed", "2",
    ];
    assert_eq!(kit_env(&sim, Some("1")).stdout, kit_env(&sim, Some("3")).stdout);
}

#[test]
fn out_directory_receives_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let chain = fixture("bd_transient.json");
    let o = kit(&[
        "classify",
        "--chain",
        &chain,
        "--N",
        "60",
        "--H",
        "60",
        "--out",
        out.to_str().unwrap(),
        "--pretty",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let saved = fs::read(out.join("report.json")).unwrap();
    assert_eq!(saved, o.stdout);
    let table = fs::read_to_string(out.join("return_table.csv")).unwrap();
    assert!(table.lines().count() > 60);
    assert!(out.join("sigma1.csv").exists());
}

#[test]
fn return_dist_prints_csv() {
    let chain = fixture("bd_transient.json");
    let o = kit(&["return-dist", "--chain", &chain, "--N", "30", "--H", "10"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(rows.len() >= 11, "{text}");
}

#[test]
fn malformed_spec_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = temp_file(
        dir.path(),
        "bad.json",
        "{\n  \"type\": \"matrix\",\n  \"rows\": [[0.5, 0.5],\n}\n",
    );
    let o = kit(&["classify", "--chain", &bad]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("bad.json:4:"), "{msg}");
}

#[test]
fn invalid_inputs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let chain = fixture("bd_transient.json");
    let heavy = temp_file(
        dir.path(),
        "heavy.json",
        r#"{"type":"matrix","rows":[[0.8,0.5],[0.1,0.1]]}"#,
    );
    let cases: Vec<Vec<&str>> = vec![
        vec!["classify", "--chain", &heavy],
        vec!["classify", "--chain", "/nonexistent/chain.json"],
        vec!["classify", "--chain", &chain, "--N", "1"],
        vec!["classify", "--chain", &chain, "--H", "0"],
        vec!["classify", "--chain", &chain, "--N", "10", "--A", "10"],
        vec!["skipfree", "--chain", &heavy],
        vec!["simulate", "--chain", &chain, "--N", "10", "--x", "12"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = kit(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert!(!o.stderr.is_empty());
    }
    let o = kit_env(&["classify", "--chain", &chain], Some("zero"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let o = kit(&[flag]);
        assert_eq!(o.status.code(), Some(0));
        assert!(!o.stdout.is_empty());
    }
}
