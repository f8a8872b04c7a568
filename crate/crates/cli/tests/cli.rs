use std::fs;
use std::process::Command;

fn angelfish() -> Command {
    Command::new(env!("CARGO_BIN_EXE_angelfish"))
}

#[test]
fn fault_free_run_passes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = angelfish()
        .args([
            "-n",
            "4",
            "--seed",
            "1",
            "--seed",
            "2",
            "--rbc",
            "fast_path",
            "--rounds",
            "8",
            "--dot",
            "0:1-4",
        ])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 3, "{stdout}");
    for f in ["config.json", "metrics.json", "dag-1-0.dot", "dag-2-0.dot"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["runs"].as_array().unwrap().len(), 2);
}

#[test]
fn emitted_manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let run = |args: &[&str], out: &std::path::Path| {
        let status = angelfish()
            .args(args)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap()
            .status;
        assert_eq!(status.code(), Some(0));
        fs::read_to_string(out.join("metrics.json")).unwrap()
    };
    let a = run(
        &["-n", "4", "--seed", "9", "--rounds", "6", "--gst", "10"],
        &first,
    );
    let manifest = first.join("config.json");
    let b = run(&["--config", manifest.to_str().unwrap()], &second);
    assert_eq!(a, b);
}

#[test]
fn config_file_and_fault_script_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("scenario.json");
    fs::write(
        &config,
        r#"{"n": 7, "rbc": "two_step", "stop": {"kind": "round", "round": 6}}"#,
    )
    .unwrap();
    let faults = dir.path().join("faults.json");
    fs::write(
        &faults,
        r#"{"crashes": [{"party": 1, "at": 3}], "byzantine": {"2": "equivocate_vertex"}}"#,
    )
    .unwrap();
    let out = angelfish()
        .arg("--config")
        .arg(&config)
        .arg("--faults")
        .arg(&faults)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn invalid_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"n": 4, "unknown": true}"#).unwrap();
    assert_eq!(
        angelfish()
            .arg("--config")
            .arg(&config)
            .output()
            .unwrap()
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        angelfish()
            .args(["-n", "3", "--rounds", "2"])
            .output()
            .unwrap()
            .status
            .code(),
        Some(0)
    );
    assert_eq!(angelfish().output().unwrap().status.code(), Some(1));
}

#[test]
fn too_many_faults_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let faults = dir.path().join("faults.json");
    fs::write(
        &faults,
        r#"{"crashes": [{"party": 0, "at": 0}, {"party": 1, "at": 0}]}"#,
    )
    .unwrap();
    let out = angelfish()
        .args(["-n", "4", "--rounds", "5"])
        .arg("--faults")
        .arg(&faults)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn liveness_issue_exits_with_three() {
    // The fast path does not recover payloads a sender withheld.
    let dir = tempfile::tempdir().unwrap();
    let faults = dir.path().join("faults.json");
    fs::write(&faults, r#"{"byzantine": {"0": "withhold_vertex"}}"#).unwrap();
    let run = |check: &str| {
        angelfish()
            .args([
                "-n",
                "4",
                "--rbc",
                "fast_path",
                "--rounds",
                "12",
                "--check",
                check,
            ])
            .arg("--faults")
            .arg(&faults)
            .output()
            .unwrap()
    };
    let out = run("all");
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("liveness"));
    assert_eq!(run("safety").status.code(), Some(0));
}
