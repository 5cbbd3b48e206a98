use std::path::Path;
use std::process::{Command, Output};

fn brwlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brwlab"))
        .current_dir(dir)
        .env_remove("BRWLAB_WORKERS")
        .args(args)
        .output()
        .unwrap()
}

fn quick_suite_config(dir: &Path) -> String {
    let p = dir.join("quick.toml");
    std::fs::write(
        &p,
        "[model]\nname = \"binary-gaussian\"\n\n[experiment]\nbudget = \"quick\"\n",
    )
    .unwrap();
    p.to_str().unwrap().to_string()
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    std::fs::read(dir.join(file)).unwrap()
}

#[test]
fn validate_model_passes_on_the_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let o = brwlab(
        dir.path(),
        &[
            "validate-model",
            "--config",
            "binary_gaussian",
            "--replications",
            "100000",
            "--out",
            "o",
        ],
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let json = String::from_utf8(read(dir.path(), "o/validate-model.json")).unwrap();
    assert!(json.contains("\"pass\": true"));
    assert!(json.contains("\"schema_version\": 1"));
}

#[test]
fn missing_config_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = brwlab(
        dir.path(),
        &["validate-model", "--config", "nowhere.toml", "--out", "o"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn unknown_config_key_exits_2_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(
        &p,
        "[model]\nname = \"binary-gaussian\"\n[execution]\nsed = 3\n",
    )
    .unwrap();
    let o = brwlab(
        dir.path(),
        &["simulate", "--config", p.to_str().unwrap(), "--out", "o"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn model_parameters_must_be_decimal_strings() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(
        &p,
        "[model]\nname = \"poisson-gaussian\"\nparams = { mean_extra = 1.5 }\n",
    )
    .unwrap();
    let o = brwlab(
        dir.path(),
        &["validate-model", "--config", p.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn operation_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(
        &p,
        "[model]\nname = \"binary-gaussian\"\n[experiment]\noperation = \"tail-kill\"\n",
    )
    .unwrap();
    let o = brwlab(dir.path(), &["simulate", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identity_suite_is_byte_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_suite_config(dir.path());
    for (out, workers) in [("a", "1"), ("b", "1"), ("c", "8")] {
        let o = brwlab(
            dir.path(),
            &[
                "identity-suite",
                "--config",
                &cfg,
                "--seed",
                "42",
                "--workers",
                workers,
                "--out",
                out,
            ],
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    for file in ["identity-suite.json", "identity-suite.csv"] {
        let a = read(dir.path(), &format!("a/{file}"));
        assert_eq!(
            a,
            read(dir.path(), &format!("b/{file}")),
            "{file} differs between runs"
        );
        assert_eq!(
            a,
            read(dir.path(), &format!("c/{file}")),
            "{file} differs between worker counts"
        );
    }
}

#[test]
fn worker_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_suite_config(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_brwlab"))
        .current_dir(dir.path())
        .env("BRWLAB_WORKERS", "zero")
        .args(["identity-suite", "--config", &cfg])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_the_shared_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let o = brwlab(
        dir.path(),
        &[
            "simulate",
            "--config",
            "one_child_zero",
            "--n",
            "4",
            "--replications",
            "100",
            "--out",
            "o",
        ],
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = String::from_utf8(read(dir.path(), "o/simulate.csv")).unwrap();
    assert!(csv.starts_with("param,param_value,n,estimate,stderr,replications,estimator_kind,model_hash,seed,schema_version\n"));
    // W_n = 1 exactly for a single child at 0
    assert!(csv.lines().any(|l| l.starts_with("w,,4,1.0,0.0,100,")));
}
