//! End-to-end runs of the `smfg` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn smfg(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smfg"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("MFG_LOG_LEVEL", "error")
        .output()
        .unwrap()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL_TIME: &str = r#"{
  "schema_version": 1,
  "problem": "time",
  "grid": {"dim": 1, "n": 16},
  "model": {"gamma": 1.2, "V": {"const": 0.5}},
  "coupling": {"alpha": 1.5, "eps_schedule": [0.1, 0.03, 0.01]},
  "data": {
    "terminal": {"fourier": [[1, 0.2, 0.0]]},
    "initial_density": {"fourier": [[0, 1.0, 0.0], [1, 0.4, 0.0]]},
    "nt": 32
  },
  "probe": {"x0": [0.4, 0.0], "tau": 0.25},
  "simulate": {"particles": 2000, "x0": [[0.2, 0.0]], "record_every": 8}
}"#;

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn decoupled_stationary_writes_hashed_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = smfg(&["stationary", "--config", &config("decoupled.json")], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["resolved_config.json", "u.fld", "m.fld", "u.csv", "picard.csv", "solution.json", "report.json", "report.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let man = manifest(&out);
    assert_eq!(man["command"], "stationary");
    let files = man["files"].as_array().unwrap();
    assert!(files.iter().all(|f| f["path"] != "manifest.json"));
    for f in files {
        let bytes = std::fs::read(out.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
    let sol: Value = serde_json::from_slice(&std::fs::read(out.join("solution.json")).unwrap()).unwrap();
    assert!((sol["hbar"].as_f64().unwrap() - 1.0).abs() < 1e-10);
}

#[test]
fn validation_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_alpha = write_config(tmp.path(), &SMALL_TIME.replace("\"alpha\": 1.5", "\"alpha\": -1.5"));
    let o = smfg(&["evolve", "--config", bad_alpha.to_str().unwrap()], &tmp.path().join("a"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kind=validation"));

    let unknown = write_config(tmp.path(), &SMALL_TIME.replace("\"gamma\": 1.2", "\"gamma\": 1.2, \"gama\": 1"));
    let o = smfg(&["evolve", "--config", unknown.to_str().unwrap()], &tmp.path().join("b"));
    assert_eq!(o.status.code(), Some(2));

    // verify without a prior solve: the dumps are missing
    let good = write_config(tmp.path(), SMALL_TIME);
    let o = smfg(&["verify", "--config", good.to_str().unwrap()], &tmp.path().join("c"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing dump"));

    let o = smfg(&["evolve", "--config", good.to_str().unwrap(), "--jobs", "0"], &tmp.path().join("d"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = smfg(&["gates", "--config", "/nonexistent/config.json"], &tmp.path().join("x"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_then_downstream_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_TIME);
    let cfg = cfg.to_str().unwrap();
    let sweep = tmp.path().join("sweep");
    let o = smfg(&["sweep-eps", "--config", cfg], &sweep);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stages: Vec<String> = std::fs::read_dir(&sweep)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("stage_"))
        .collect();
    assert_eq!(stages.len(), 3, "{stages:?}");
    for f in ["limit.json", "limit.csv", "report.json", "report.txt"] {
        assert!(sweep.join(f).is_file(), "missing {f}");
    }

    // evolve into its own directory, then read it back
    let run = tmp.path().join("run");
    assert!(smfg(&["evolve", "--config", cfg], &run).status.success());
    assert!(run.join("u.fld").is_file() && run.join("timeline.csv").is_file());
    let run_s = run.to_str().unwrap();

    let o = smfg(&["verify", "--config", cfg, "--from", run_s], &tmp.path().join("verify"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("verify/verify.json").is_file());

    let probe = tmp.path().join("probe");
    let o = smfg(
        &["probe", "--config", cfg, "--from", run_s, "--x0", "0.3", "--tau", "0.5", "--moll-width", "0.25", "--nu", "0.5", "--q", "2"],
        &probe,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p: Value = serde_json::from_slice(&std::fs::read(probe.join("probe.json")).unwrap()).unwrap();
    assert!(p.to_string().contains("representation"));
    let resolved: Value = serde_json::from_slice(&std::fs::read(probe.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["probe"]["tau"], 0.5);

    let sim = tmp.path().join("sim");
    let o = smfg(
        &["simulate", "--config", cfg, "--from", run_s, "--particles", "3000", "--seed", "4", "--x0", "0.1", "--x0", "0.6"],
        &sim,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(sim.join("density_l1.csv").is_file() && sim.join("cost.csv").is_file());

    // particles below the floor are rejected
    let o = smfg(&["simulate", "--config", cfg, "--from", run_s, "--particles", "10"], &tmp.path().join("sim2"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gates_prints_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    let o = smfg(&["gates", "--config", &config("time_2d.json")], &out);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("A5") && text.contains("evolutive result"));
    assert!(out.join("gates.json").is_file());
}

#[test]
fn identical_runs_have_identical_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_TIME);
    let cfg = cfg.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(smfg(&["sweep-eps", "--config", cfg, "--seed", "9"], &a).status.success());
    assert!(smfg(&["sweep-eps", "--config", cfg, "--seed", "9"], &b).status.success());
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(b.join("manifest.json")).unwrap());
}
