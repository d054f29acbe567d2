use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Binomial-tree price of the reference put with 10000 steps.
const V_REF: f64 = 6.090295412879269;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn amfd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amfd")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn bs1d() -> String {
    workspace().join("configs/bs1d.json").display().to_string()
}

/// A coarse copy of the reference configuration.
fn small_config(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(bs1d()).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["scheme"]["tau"] = 0.02.into();
    v["scheme"]["h"] = 0.05.into();
    v["study"]["converge"] =
        serde_json::json!({ "tau0": 0.08, "h0": 0.2, "levels": 3, "reference": "crr", "crr_steps": 2000 });
    v["study"]["exitprob"] = serde_json::json!({ "radii": [0.25, 0.5], "n_paths": 4000, "n_steps": 100 });
    let path = dir.join("small.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

#[test]
fn price_reference_case_matches_tree() {
    let out = amfd(&["price", "--config", &bs1d()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let value = v["value"].as_f64().unwrap();
    assert!((value - V_REF).abs() <= 0.05, "{value}");
    assert!(v["residual"].as_f64().unwrap() <= 1e-10);
    assert!((v["S"][0].as_f64().unwrap() - 100.0).abs() < 1e-9);
    assert!((v["x"][0].as_f64().unwrap() - 100f64.ln()).abs() < 1e-15);
}

#[test]
fn cutoff_beyond_radius_is_a_config_error() {
    let out = amfd(&["price", "--config", &bs1d(), "--R1", "3.0"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("R/R1"), "{err}");
}

#[test]
fn later_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let bad_then_good = amfd(&["price", "--config", cfg, "--tau", "5.0", "--tau", "0.05"]);
    assert!(bad_then_good.status.success(), "{}", stderr(&bad_then_good));
    let good_then_bad = amfd(&["price", "--config", cfg, "--tau", "0.05", "--tau", "5.0"]);
    assert_eq!(good_then_bad.status.code(), Some(1));
    assert!(stderr(&good_then_bad).contains("`tau`"));
}

#[test]
fn malformed_configs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = std::fs::read_to_string(bs1d()).unwrap().replace("\"h\": 0.005", "\"hh\": 0.005");
    std::fs::write(&path, text).unwrap();
    let out = amfd(&["price", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("hh"), "{}", stderr(&out));

    let missing = amfd(&["price", "--config", dir.path().join("none.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));

    let bad_flag = amfd(&["price", "--config", &bs1d(), "--tau", "fast"]);
    assert_eq!(bad_flag.status.code(), Some(1));
    let bad_method = amfd(&["price", "--config", &bs1d(), "--method", "sor"]);
    assert_eq!(bad_method.status.code(), Some(1));
    assert!(stderr(&bad_method).contains("policy-iteration"));
}

#[test]
fn validate_small_passes() {
    let out = amfd(&["validate", "--small"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("[PASS]")).count(), 4);
}

#[test]
fn exitprob_is_reproducible_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let a = amfd(&["exitprob", "--config", cfg, "--seed", "42", "--jobs", "1"]);
    let b = amfd(&["exitprob", "--config", cfg, "--seed", "42", "--jobs", "3"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let c = amfd(&["exitprob", "--config", cfg, "--seed", "43", "--jobs", "1"]);
    assert_ne!(a.stdout, c.stdout);
    // header, column titles, one row per radius
    assert_eq!(stdout(&a).lines().count(), 4);
}

#[test]
fn converge_writes_a_schema_valid_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_path = dir.path().join("conv.json");
    let out = amfd(&["converge", "--config", cfg.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(!dir.path().join("conv.json.partial").exists());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let schema_text = std::fs::read_to_string(workspace().join("schema/convergence-report.schema.json")).unwrap();
    let schema: serde_json::Value = serde_json::from_str(&schema_text).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(report["rows"].as_array().unwrap().len(), 3);

    let csv_path = dir.path().join("conv.csv");
    let out = amfd(&["converge", "--config", cfg.to_str().unwrap(), "--out", csv_path.to_str().unwrap()]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().next(), Some("level,tau,h,error,residual,iterations"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn failed_study_leaves_only_a_partial_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_path = dir.path().join("conv.json");
    // unreachable tolerance: the first level solve cannot converge
    let out = amfd(&[
        "converge",
        "--config",
        cfg.to_str().unwrap(),
        "--lcp-tol",
        "1e-300",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!out_path.exists());
    let partial = dir.path().join("conv.json.partial");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(partial).unwrap()).unwrap();
    assert_eq!(report["complete"], false);
    assert!(report["error"].is_string());
}

#[test]
fn shipped_configs_match_the_schema() {
    let schema_text = std::fs::read_to_string(workspace().join("schema/config.schema.json")).unwrap();
    let schema: serde_json::Value = serde_json::from_str(&schema_text).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    for entry in std::fs::read_dir(workspace().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{}: {errors:?}", path.display());
    }
}

#[test]
fn basket_config_prices() {
    let cfg = workspace().join("configs/basket2d.json");
    let out = amfd(&["price", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let value = v["value"].as_f64().unwrap();
    // at the money: above zero, below the strike
    assert!(value > 0.0 && value < 100.0, "{value}");
    assert!(v["residual"].as_f64().unwrap() <= 1e-10);
}
