//! End-to-end runs of the `critjump` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

const BASE: &str = r#"
seed = 7

[problem]
N = 3
delta = 0.5
a = 1.0
lambda = 1.0
lambdas = [0.5, 1.0, 2.0, 3.0, 4.0, 4.4, 4.6, 5.0]

[grid]
kind = "radial"
M = 256
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(cfg: &Path, out: &Path, args: &[&str]) -> i32 {
    let st = Command::new(env!("CARGO_BIN_EXE_critjump"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .status()
        .unwrap();
    st.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_tagged_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", BASE);
    let out = tmp.path().join("o");
    assert_eq!(run(&cfg, &out, &["solve"]), 0);
    let rep = json(&out.join("report.json"));
    let hash = rep["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(rep["command"], "solve");
    let csv = fs::read_to_string(out.join("solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), format!("# config_hash={hash}"));
    assert_eq!(lines.next().unwrap(), "r,u");
    assert_eq!(lines.count(), 256 - 1);
    assert!(out.join("run.log").exists());

    // a stored solution passes verification
    let vcfg = format!(
        "{BASE}\n[verify]\nsolution = {:?}\n",
        out.join("solution.csv").display().to_string()
    );
    let vcfg = write_config(tmp.path(), "v.toml", &vcfg);
    let vout = tmp.path().join("v");
    assert_eq!(run(&vcfg, &vout, &["verify"]), 0);
    let v = json(&vout.join("verify.json"));
    assert_eq!(v["passed"], true);
}

#[test]
fn config_hash_tracks_overrides() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", BASE);
    let hash = |extra: &[&str], name: &str| {
        let out = tmp.path().join(name);
        let mut args = vec!["solve"];
        args.extend_from_slice(extra);
        assert_eq!(run(&cfg, &out, &args), 0);
        json(&out.join("report.json"))["config_hash"].as_str().unwrap().to_string()
    };
    let h1 = hash(&[], "a");
    let h2 = hash(&[], "b");
    let h3 = hash(&["--seed", "8"], "c");
    assert_eq!(h1, h2);
    assert_ne!(h1, h3);
}

#[test]
fn second_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", BASE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&cfg, &a, &["second"]), 0);
    assert_eq!(run(&cfg, &b, &["second"]), 0);
    for f in ["certificate.json", "classification.json", "composed.csv", "path_trace.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = json(&a.join("certificate.json"));
    assert_eq!(c["case"], "MP");
    assert!(c["gamma0"].as_f64().unwrap() < c["threshold"].as_f64().unwrap());
}

#[test]
fn sweep_writes_one_row_per_lambda() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", BASE);
    let out = tmp.path().join("o");
    assert_eq!(run(&cfg, &out, &["sweep"]), 0);
    let csv = fs::read_to_string(out.join("branch.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 8);
    for r in &rows {
        assert_eq!(r.split(',').count(), 11, "{r}");
    }
    let j = json(&out.join("branch.json"));
    let pts = j["rows"].as_array().unwrap();
    assert!(pts[0]["first_found"].as_bool().unwrap());
    assert!(!pts[7]["first_found"].as_bool().unwrap());
}

#[test]
fn lambda_max_and_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", BASE);
    let out = tmp.path().join("o");
    assert_eq!(run(&cfg, &out, &["lambda-max"]), 0);
    let j = json(&out.join("lambda_max.json"));
    let hi = j["hi"].as_f64().unwrap();
    let bound = j["bound"].as_f64().unwrap();
    assert!(hi <= bound && j["lo"].as_f64().unwrap() > 0.0);

    let high = BASE.replace("lambda = 1.0", &format!("lambda = {}", 10.0 * bound));
    let hcfg = write_config(tmp.path(), "h.toml", &high);
    assert_eq!(run(&hcfg, &tmp.path().join("h"), &["solve"]), 2);

    let bad = format!("{BASE}\nfoo = 1\n");
    let bcfg = write_config(tmp.path(), "b.toml", &bad);
    assert_eq!(run(&bcfg, &tmp.path().join("b"), &["solve"]), 1);

    let missing = tmp.path().join("absent.toml");
    assert_eq!(run(&missing, &tmp.path().join("m"), &["solve"]), 1);
}

#[test]
fn json_configs_are_accepted() {
    let tmp = TempDir::new().unwrap();
    let text = r#"{"seed": 3, "problem": {"N": 3, "delta": 0.5, "a": 1.0, "lambda": 0.5},
                   "grid": {"kind": "radial", "M": 128}}"#;
    let cfg = write_config(tmp.path(), "c.json", text);
    assert_eq!(run(&cfg, &tmp.path().join("o"), &["solve"]), 0);
}

#[test]
fn bubble_check_reports_positive_margin() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", BASE);
    let out = tmp.path().join("o");
    assert_eq!(run(&cfg, &out, &["bubble-check"]), 0);
    let j = json(&out.join("bubble.json"));
    assert!(j["report"]["margin"].as_f64().unwrap() > 0.0, "{j}");
}
