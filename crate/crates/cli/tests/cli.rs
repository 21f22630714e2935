use std::path::Path;
use std::process::{Command, Output};

fn endcalc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_endcalc")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = r#"
[[ends]]
n = 3
r_max = 100.0
cells = 40

[[ends]]
n = 4
r_max = 100.0
cells = 40
"#;

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn passing_scenario_exits_zero_with_json_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = endcalc(&["norms", "--scenario", "case-calculus", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("case-calculus.summary.json")).unwrap()).unwrap();
    assert_eq!(json["scenario"], "case-calculus");
    for a in json["assertions"].as_array().unwrap() {
        for key in ["name", "target", "measured", "tolerance", "pass"] {
            assert!(a.get(key).is_some(), "missing {key}");
        }
    }
    assert!(out.join("cases.csv").exists());
}

#[test]
fn malformed_config_exits_two_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p_grid = [2.0, 0.5]\n");
    let o = endcalc(&["norms", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("p_grid"));

    let cfg = write_config(dir.path(), "unknown_key = 1\n");
    let o = endcalc(&["norms", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown_key"));
}

#[test]
fn scenario_outside_subcommand_and_missing_seed_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = endcalc(&["square", "--scenario", "gp-exponent", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(dir.path(), SMALL);
    let o = endcalc(&["rbound", "--config", &cfg, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn failed_assertion_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[tolerances]\ncase_runtime_secs = 1e-12\n");
    let out = dir.path().join("out");
    let o = endcalc(&["norms", "--config", &cfg, "--scenario", "case-calculus", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL scan runtime seconds"));

    let o = endcalc(&["report", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["pass"], false);
}

#[test]
fn same_config_and_seed_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = endcalc(&["rbound", "--config", &cfg, "--seed", "11", "--threads", threads, "--out", out.to_str().unwrap()]);
        assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);

    let c = dir.path().join("c");
    endcalc(&["rbound", "--config", &cfg, "--seed", "12", "--out", c.to_str().unwrap()]);
    assert_ne!(fa, csv_files(&c));
}
