use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contrastive-lab"))
        .args(args)
        .current_dir(dir)
        .env_remove("CONTRASTIVE_LAB_VERIFY_PERTURB_H")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(covariance: &str) -> String {
    format!(
        r#"{{
  "experiment": "gaussian2d",
  "seed": 3,
  "covariance": {covariance},
  "n_x": 1,
  "sweep": {{ "embedding_dims": [1], "batch_sizes": [64], "sample_sizes": [400] }},
  "train": {{ "epochs": 3, "learning_rate": 0.01, "loss": {{ "kind": "cond", "lambda_u": 1.0, "lambda_v": 1.0 }} }}
}}"#
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            out.insert(
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            );
        }
    }
    out
}

#[test]
fn run_is_reproducible_and_seed_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("cfg.json"), small_config("[[1.5, 1.0], [1.0, 1.5]]")).unwrap();
    let run = |out: &str, seed: Option<&str>| {
        let mut args = vec!["run", "cfg.json", "--output-dir", out];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let o = cli(&args, tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("finished"));
        snapshot(&tmp.path().join(out))
    };
    let a = run("a", None);
    let b = run("b", None);
    let c = run("c", Some("3"));
    let d = run("d", Some("99"));
    assert!(!a.is_empty());
    assert!(a.keys().any(|k| k.ends_with(".csv")) && a.keys().any(|k| k.ends_with(".meta.json")));
    assert_eq!(a, b);
    // the CSVs depend only on the effective seed
    let csv = |m: &BTreeMap<String, Vec<u8>>| -> Vec<Vec<u8>> {
        m.iter()
            .filter(|(k, _)| k.ends_with(".csv"))
            .map(|(_, v)| v.clone())
            .collect()
    };
    assert_eq!(csv(&a), csv(&c));
    assert_ne!(csv(&a), csv(&d));
}

#[test]
fn malformed_config_exits_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let text = small_config("[[1.5, 1.0], [1.0, 1.5]]").replace("\"n_x\": 1", "\"n_x\": \"one\"");
    fs::write(tmp.path().join("bad.json"), text).unwrap();
    let o = cli(&["run", "bad.json", "--output-dir", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("bad.json:5:"), "{err}");
    assert!(err.contains('^'));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn missing_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cli(&["run", "nope.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot read config"));
}

#[test]
fn runtime_failure_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("cfg.json"), small_config("[[1.0, 2.0], [2.0, 1.0]]")).unwrap();
    let o = cli(&["run", "cfg.json", "--output-dir", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn verify_passes_and_catches_perturbed_shrinkage() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cli(&["verify"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().filter(|l| l.starts_with("PASS ")).count() >= 10);
    assert!(out.contains("checks passed"));

    let o = Command::new(env!("CARGO_BIN_EXE_contrastive-lab"))
        .arg("verify")
        .env("CONTRASTIVE_LAB_VERIFY_PERTURB_H", "1e-3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().any(|l| l.starts_with("FAIL shrinkage_h")), "{out}");
    assert!(stderr(&o).contains("shrinkage_h"));
}
