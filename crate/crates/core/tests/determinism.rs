//! End-to-end determinism checks: the CLI binary must produce
//! byte-identical result files when re-run with the same seed.

use std::fs;
use std::path::Path;
use std::process::Command;

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

/// Run the binary once and return the bytes it wrote to `--out`.
fn run_once(config: &str, extra: &[&str], out: &Path) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_dqsim"))
        .arg("run")
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .status()
        .expect("spawn dqsim");
    assert!(status.success(), "dqsim run failed with {status}");
    fs::read(out).expect("read result file")
}

fn assert_identical_runs(config: &str, extra: &[&str]) {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("results.csv");
    let first = run_once(config, extra, &out);
    assert!(!first.is_empty(), "result file is empty");
    for attempt in 1..5 {
        let again = run_once(config, extra, &out);
        assert_eq!(
            first, again,
            "run {attempt} produced different bytes for {config}"
        );
    }
}

#[test]
fn noisy_density_matrix_runs_are_byte_identical() {
    let config = scenario("bell_cat_noisy.toml");
    assert_identical_runs(&config, &["--shots", "3", "--seed", "7"]);
}

#[test]
fn noisy_ket_runs_are_byte_identical() {
    let config = scenario("bell_cat_noisy.toml");
    assert_identical_runs(
        &config,
        &["--shots", "5", "--seed", "11", "--set", "run.formalism=ket"],
    );
}

#[test]
fn json_output_is_byte_identical() {
    let config = scenario("bell_cat_noisy.toml");
    assert_identical_runs(&config, &["--shots", "2", "--seed", "3", "--format", "json"]);
}

#[test]
fn different_seeds_differ_in_noisy_ket_runs() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = scenario("bell_cat_noisy.toml");
    let a = run_once(
        &config,
        &["--shots", "4", "--seed", "1", "--set", "run.formalism=ket"],
        &dir.path().join("a.csv"),
    );
    let b = run_once(
        &config,
        &["--shots", "4", "--seed", "2", "--set", "run.formalism=ket"],
        &dir.path().join("b.csv"),
    );
    assert_ne!(a, b, "different seeds should change sampled ket outcomes");
}
