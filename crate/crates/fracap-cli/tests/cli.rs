use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fracap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracap"))
        .args(args)
        .env_remove("FRACAP_THREADS")
        .output()
        .expect("fracap runs")
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

#[test]
fn constants_are_printed_without_shapes() {
    let out = fracap(&["constants", "--n", "2", "--s", "0.5"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let c = v["c_ns"].as_f64().unwrap();
    assert!((c - 0.5 / std::f64::consts::PI).abs() < 1e-14);
}

#[test]
fn capacity_of_a_disc_with_both_solvers() {
    let disc = repo_file("shapes/disc.json");
    let out = fracap(
        &[
            "capacity", "--s", "0.5", "--R", "2", "--h", "0.125", "--method", "both", "--shape",
        ]
        .iter()
        .copied()
        .chain([disc.to_str().unwrap()])
        .collect::<Vec<_>>(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = stdout_json(&out);
    let d = v[0]["direct"]["value"].as_f64().unwrap();
    let e = v[0]["extension"]["value"].as_f64().unwrap();
    assert!((d / e - 1.0).abs() < 0.03, "{d} vs {e}");
    assert_eq!(v[0]["shape"], "disc");
}

#[test]
fn classical_capacity_is_only_for_the_capacity_command() {
    let ball = repo_file("shapes/ball3.json");
    let out = fracap(&[
        "capacity",
        "--method",
        "classical",
        "--R",
        "2",
        "--h",
        "0.25",
        "--shape",
        ball.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert!(v[0]["classical"]["value"].as_f64().unwrap() > 10.0);
    let out = fracap(&[
        "deficit",
        "--s",
        "0.5",
        "--method",
        "classical",
        "--shape",
        ball.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_parameters_exit_with_status_two_and_name_the_invariant() {
    let disc = repo_file("shapes/disc.json");
    let disc = disc.to_str().unwrap();
    for (args, needle) in [
        (
            vec!["deficit", "--s", "1.2", "--shape", disc],
            "s must lie in (0, 1)",
        ),
        (
            vec!["deficit", "--s", "0.5", "--gamma", "0.2", "--shape", disc],
            "gamma",
        ),
        (
            vec![
                "deficit", "--s", "0.5", "--R", "2", "--h", "0.5", "--shape", disc,
            ],
            "h ≤ R/8",
        ),
        (
            vec!["deficit", "--s", "0.5", "--n", "3", "--shape", disc],
            "dimension",
        ),
        (vec!["constants", "--n", "1", "--s", "0.6"], "n > 2s"),
        (vec!["deficit", "--s", "0.5"], "--shape"),
        (
            vec![
                "deficit",
                "--s",
                "0.5",
                "--shape",
                "/nonexistent/shape.json",
            ],
            "cannot read",
        ),
    ] {
        let out = fracap(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{args:?}: {err}");
    }
    assert_eq!(fracap(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn config_files_are_resolved_relative_to_themselves() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(repo_file("shapes/dumbbell.json"), dir.path().join("d.json")).unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "s = 0.5\nR = 2.0\nh = 0.125\nshape = [\"d.json\"]\nout = \"result\"\n",
    )
    .unwrap();
    let out = fracap(&["deficit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let result = dir.path().join("result");
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(result.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "deficit");
    assert_eq!(manifest["status"], 0);
    assert_eq!(manifest["config"]["grid"]["h"], 0.125);
    let deficit: Value =
        serde_json::from_str(&std::fs::read_to_string(result.join("deficit.json")).unwrap())
            .unwrap();
    assert!(deficit[0]["deficit"].as_f64().unwrap() > 0.0);
    assert!(result.join("ball_cache.json").exists());
}

#[test]
fn files_are_written_only_with_an_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let disc = repo_file("shapes/disc.json");
    let out = Command::new(env!("CARGO_BIN_EXE_fracap"))
        .current_dir(dir.path())
        .args(["asymmetry", "--shape", disc.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    assert_eq!(stdout_json(&out)[0]["asymmetry"]["value"], 0.0);
}

#[test]
fn scan_reports_an_exponent() {
    let bars = repo_file("shapes/bars.json");
    let out = fracap(&[
        "scan",
        "--s",
        "0.5",
        "--R",
        "2",
        "--h",
        "0.0625",
        "--shape",
        bars.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = stdout_json(&out);
    assert_eq!(v["rows"].as_array().unwrap().len(), 5);
    assert_eq!(v["underdetermined"], false);
    assert!(v["exponent"].as_f64().unwrap().is_finite());
    assert_eq!(v["rows"][0]["shape"], "bars[0]");
}

#[test]
fn sweep_needs_three_dimensions() {
    let out = fracap(&["sweep", "--n", "2", "--s-ladder", "0.3:0.4:2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = fracap(&[
        "sweep",
        "--n",
        "3",
        "--s-ladder",
        "0.9:0.9:1",
        "--R",
        "2",
        "--h",
        "0.25",
    ]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "a single coarse point exceeds the limit value"
    );
    let v = stdout_json(&out);
    assert_eq!(v["report"]["points"].as_array().unwrap().len(), 1);
}
