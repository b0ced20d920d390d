use std::path::{Path, PathBuf};
use std::process::Command;

use trigbound_cli::{cli_main, load, run, validate, Experiment, Manifest, EXIT_ERROR, EXIT_GATE, EXIT_OK};

fn config_dir(kind: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(kind)
}

fn smoke(name: &str) -> PathBuf {
    config_dir("smoke").join(format!("{name}.toml"))
}

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("trigbound").chain(list.iter().copied()).map(String::from).collect()
}

fn read_manifest(path: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn checked_in_configs_validate() {
    let mut seen = 0;
    for kind in ["acceptance", "smoke"] {
        let mut names = Vec::new();
        for entry in std::fs::read_dir(config_dir(kind)).unwrap() {
            let path = entry.unwrap().path();
            let loaded = load(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
            let v = validate(&loaded.config);
            assert!(v.is_empty(), "{}: {v:?}", path.display());
            let exp: Experiment = loaded.experiment.expect("configs name their experiment").parse().unwrap();
            assert_eq!(path.file_stem().unwrap(), exp.name());
            names.push(exp);
            seen += 1;
        }
        for exp in Experiment::ALL {
            assert!(names.contains(&exp), "{kind} has no config for {exp}");
        }
    }
    assert_eq!(seen, 24);
}

#[test]
fn freq_sweep_writes_one_row_per_theta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&smoke("freq-sweep")).unwrap().config;
    let report = run(&cfg, Experiment::FreqSweep, 1, dir.path()).unwrap();
    let mut reader = csv::Reader::from_path(&report.csv_path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["eps", "lambda", "theta_x", "theta_y", "n", "estimate", "ci_lo", "ci_hi", "n_samples", "seed"]
    );
    let thetas: Vec<(String, String)> = reader.records().map(|r| r.unwrap()).map(|r| (r[2].to_string(), r[3].to_string())).collect();
    // Two values per axis sharing the base point (1, 1).
    assert_eq!(thetas, [("1", "1"), ("100", "1"), ("1", "100")].map(|(a, b)| (a.to_string(), b.to_string())));
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&smoke("scaling-scan")).unwrap().config;
    let a = run(&cfg, Experiment::ScalingScan, 1, &dir.path().join("a")).unwrap();
    let b = run(&cfg, Experiment::ScalingScan, 1, &dir.path().join("b")).unwrap();
    assert_eq!(std::fs::read(&a.csv_path).unwrap(), std::fs::read(&b.csv_path).unwrap());
    assert_eq!(a.manifest.result_hash, b.manifest.result_hash);
    assert_eq!(a.manifest.config_hash, b.manifest.config_hash);
}

#[test]
fn manifest_rerun_reproduces_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let cfg = smoke("lemma-check");
    let code = cli_main(args(&["--config", cfg.to_str().unwrap(), "--workers", "1", "--out", first.to_str().unwrap()]));
    assert_eq!(code, EXIT_OK);
    let m1_path = first.join("lemma-check.json");
    let m1 = read_manifest(&m1_path);
    assert_eq!(m1.schema, 1);
    assert_eq!(m1.experiment, "lemma-check");
    assert_eq!(m1.workers, 1);
    let code = cli_main(args(&["--config", m1_path.to_str().unwrap(), "--workers", "1", "--out", second.to_str().unwrap()]));
    assert_eq!(code, EXIT_OK);
    let m2 = read_manifest(&second.join("lemma-check.json"));
    assert_eq!(m1.config_hash, m2.config_hash);
    assert_eq!(m1.result_hash, m2.result_hash);
    assert_eq!(m1.config, m2.config);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke("isserlis-check");
    let code = cli_main(args(&["--config", cfg.to_str().unwrap(), "--seed", "99", "--out", dir.path().to_str().unwrap()]));
    assert_eq!(code, EXIT_OK);
    let m = read_manifest(&dir.path().join("isserlis-check.json"));
    assert_eq!(m.seed, 99);
    assert_eq!(m.config.seed, 99);
}

#[test]
fn failed_gate_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(smoke("kernel-check")).unwrap().replace("taylor_slack = 0.05", "taylor_slack = -5.0");
    let path = dir.path().join("strict.toml");
    std::fs::write(&path, text).unwrap();
    let code = cli_main(args(&["--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]));
    assert_eq!(code, EXIT_GATE);
    let m = read_manifest(&dir.path().join("kernel-check.json"));
    assert!(!m.passed);
    assert!(m.checks.iter().any(|c| !c.passed));
}

#[test]
fn invalid_config_exits_with_one_and_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(smoke("freq-sweep")).unwrap().replace("gamma = 0.4", "gamma = 0.6");
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_trigbound"))
        .args(["--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_ERROR));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("γ ≤ |s|/2 violated: γ=0.6"), "{stderr}");
    assert!(!dir.path().join("freq-sweep.csv").exists());
}

#[test]
fn operational_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke("freq-sweep");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(cli_main(args(&["--config", cfg, "--experiment", "frequency-sweep"])), EXIT_ERROR);
    assert_eq!(cli_main(args(&["--config", "/nonexistent/config.toml"])), EXIT_ERROR);
    assert_eq!(cli_main(args(&["--experiment", "freq-sweep"])), EXIT_ERROR);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = blocker.join("sub");
    assert_eq!(cli_main(args(&["--config", cfg, "--out", out.to_str().unwrap()])), EXIT_ERROR);
    // A model experiment without a [model] section.
    assert_eq!(cli_main(args(&["--config", cfg, "--experiment", "kpz-object", "--out", dir.path().to_str().unwrap()])), EXIT_ERROR);
}
