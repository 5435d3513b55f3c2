//! End-to-end tests of the `magweyl` binary: shipped configurations,
//! exit codes, `--check` and reproducibility.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magweyl"))
        .args([command, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("the binary runs")
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).expect("manifest exists")).expect("valid JSON")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

const SMALL_PRODUCT: &str = r#"
[grid]
dim = 1
points = 8
length = "balanced"

[product]
f = "exp(-x1^2/2 - p1^2/2)"
g = "exp(-(x1 - 0.2)^2/2 - (p1 + 0.1)^2/2)"
lambda = 1
eps = [0.25, 0.125, 0.0625]
orders = [0, 1]
"#;

#[test]
fn every_shipped_configuration_passes() {
    let dir = tempfile::tempdir().unwrap();
    for command in ["flux", "quantize", "product", "egorov", "bloch-bands", "bloch-berry", "bloch-flow", "hall"] {
        let out = dir.path().join(command);
        let result = run(command, &configs().join(format!("{command}.toml")), &out, &[]);
        assert!(result.status.success(), "{command}: {}", String::from_utf8_lossy(&result.stderr));
        let m = manifest(&out);
        assert_eq!(m["command"], command);
        assert_eq!(m["all_passed"], true, "{command}");
        let checks = m["checks"].as_array().unwrap();
        assert!(!checks.is_empty(), "{command} has no checks");
        assert!(checks.iter().all(|c| c["passed"] == true));
        for file in m["outputs"].as_array().unwrap() {
            assert!(out.join(file.as_str().unwrap()).exists(), "{command}: missing {file}");
        }
    }
}

#[test]
fn check_mode_writes_only_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let result = run("flux", &configs().join("flux.toml"), &out, &["--check"]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let files: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, ["manifest.json"]);
    assert_eq!(manifest(&out)["check_only"], true);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_PRODUCT);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("product", &config, &a, &[]).status.success());
    assert!(run("product", &config, &b, &["--threads", "3"]).status.success());
    for name in ["product.csv", "product_orders.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn unknown_keys_are_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &SMALL_PRODUCT.replace("orders = [0, 1]", "orders = [0, 1]\ncolour = 3"));
    let out = dir.path().join("out");
    let result = run("product", &config, &out, &[]);
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("colour"));
}

#[test]
fn malformed_expressions_are_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &SMALL_PRODUCT.replace("exp(-x1^2/2 - p1^2/2)", "exp(-x1^2/2 -"));
    let out = dir.path().join("out");
    let result = run("product", &config, &out, &[]);
    assert_eq!(result.status.code(), Some(2));
    let m = manifest(&out);
    assert_eq!(m["all_passed"], false);
    assert!(m["error"].as_str().unwrap().contains("product.f"));
}

#[test]
fn out_of_range_parameters_are_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &SMALL_PRODUCT.replace("lambda = 1", "lambda = 2"));
    assert_eq!(run("product", &config, &dir.path().join("out"), &[]).status.code(), Some(2));
}

#[test]
fn missing_configuration_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let result = run("flux", &dir.path().join("absent.toml"), &dir.path().join("out"), &[]);
    assert_eq!(result.status.code(), Some(1));
}

#[test]
fn failed_checks_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("{SMALL_PRODUCT}\n[tolerances]\nslope = -5.0\n"));
    let out = dir.path().join("out");
    let result = run("product", &config, &out, &[]);
    assert_eq!(result.status.code(), Some(3));
    let m = manifest(&out);
    assert_eq!(m["all_passed"], false);
    let failed: Vec<&str> = m["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["remainder_slope_order_0", "remainder_slope_order_1"]);
    // Outputs are still written for inspection.
    assert!(out.join("product.csv").exists());
}

#[test]
fn constants_may_use_grid_quantities() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_PRODUCT
        .replace("[grid]", "[constants]\nk = \"2*pi/L\"\nc = 0.2\n\n[grid]")
        .replace("(x1 - 0.2)", "(x1 - c) + 0.1*cos(k*x1)");
    let config = write_config(dir.path(), &text);
    let result = run("product", &config, &dir.path().join("out"), &[]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));

    let shadowing = SMALL_PRODUCT.replace("[grid]", "[constants]\nx1 = 1\n\n[grid]");
    let config = write_config(dir.path(), &shadowing);
    assert_eq!(run("product", &config, &dir.path().join("out2"), &[]).status.code(), Some(2));
}
