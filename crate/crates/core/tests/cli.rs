use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stable_lab::cli::{exit_code, run, ExperimentConfig};
use stable_lab::LabError;

fn lab(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stable-lab"));
    cmd.args(args).arg("--out").arg(out).env("RUST_LOG", "warn");
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

#[test]
fn defaults_round_trip_and_partial_files() {
    let c = ExperimentConfig::default();
    let text = toml::to_string(&c).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    let partial = ExperimentConfig::from_toml("seed = 3\n[bdg]\npaths = 10\n").unwrap();
    assert_eq!(partial.seed, 3);
    assert_eq!(partial.bdg.paths, 10);
    assert_eq!(partial.zakai, c.zakai);
    assert!(ExperimentConfig::from_toml("[bdg]\npathz = 10\n").is_err());
}

#[test]
fn hash_tracks_effective_config() {
    let c = ExperimentConfig::default();
    assert_eq!(c.hash(), ExperimentConfig::default().hash());
    assert_eq!(c.hash().len(), 64);
    assert_ne!(c.hash(), c.refined().hash());
    let mut d = c.clone();
    d.seed = 8;
    assert_ne!(c.hash(), d.hash());
    assert_eq!(c.refined().prop1.n, 2 * c.prop1.n);
    assert_eq!(c.refined().bdg.paths, 2 * c.bdg.paths);
}

#[test]
fn symbol_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run("verify-symbol", &ExperimentConfig::default(), dir.path(), false).unwrap();
    assert!(summary.pass);
    assert_eq!(summary.results.len(), 1);
    let csv = fs::read_to_string(dir.path().join("verify-symbol/symbol.csv")).unwrap();
    assert!(csv.starts_with(&format!("# config_hash={} seed=7", summary.config_hash)));
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 7);
    assert_eq!(json["pass"], true);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(lab(&["verify-symbol"], None, &out).status.code(), Some(0));

    // d = 1 errors are exactly zero, so a zero tolerance fails the check
    let strict = dir.path().join("strict.toml");
    fs::write(&strict, "[symbol]\ntolerance = 0.0\n").unwrap();
    let o = lab(&["verify-symbol"], Some(&strict), &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL verify-symbol"));

    // the ensemble band lies above the Nyquist frequency of an 8-point grid
    let tiny = dir.path().join("tiny.toml");
    fs::write(&tiny, "[prop1]\nn = 8\n").unwrap();
    assert_eq!(lab(&["verify-prop1"], Some(&tiny), &out).status.code(), Some(2));

    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "[kernel]\nheat_m = 3\n").unwrap();
    assert_eq!(lab(&["verify-kernel"], Some(&unknown), &out).status.code(), Some(2));

    assert_eq!(exit_code(&LabError::InvalidGrid("x".into())), 2);
    assert_eq!(exit_code(&LabError::Numerical("x".into())), 3);
    assert_eq!(exit_code(&LabError::Degenerate("x".into())), 3);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["verify-auxl2", "--seed", "11"], None, dir.path());
    assert_eq!(o.status.code(), Some(0));
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 11);
}
