//! End-to-end smoke of the command-line surface: gen-scene → validate →
//! run → suite → report, plus exit-code behavior.

use std::process::Command;

fn sentinel() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sentinel"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn");
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_runs() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    let out_dir = dir.path().join("out");

    run_ok(sentinel().args([
        "gen-scene",
        "--out",
        scene.to_str().unwrap(),
        "--blocks-x",
        "2",
        "--blocks-y",
        "2",
        "--places",
        "50",
        "--agents",
        "3",
        "--sentinels",
        "3",
        "--seed",
        "5",
    ]));
    assert!(scene.exists());

    let validate = run_ok(sentinel().args(["validate", "--scene", scene.to_str().unwrap()]));
    assert!(validate.contains("ok"), "{validate}");

    let run_out = run_ok(sentinel().args([
        "run",
        "--scene",
        scene.to_str().unwrap(),
        "--policy",
        "oracle_dz",
        "--agents",
        "3",
        "--sentinels",
        "3",
        "--horizon",
        "150",
        "--seed",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert!(run_out.contains("success="), "{run_out}");
    let trace = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter_map(Result::ok)
        .find(|e| e.file_name().to_string_lossy().starts_with("trace-"))
        .expect("trace file written");
    let first_line = std::fs::read_to_string(trace.path())
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert!(first_line.starts_with("{\"t\":1,"), "{first_line}");

    let suite_out = run_ok(sentinel().args([
        "suite",
        "--scene",
        scene.to_str().unwrap(),
        "--policy",
        "oracle",
        "--policy",
        "oracle_dz",
        "--seeds",
        "2",
        "--agents",
        "3",
        "--sentinels",
        "3",
        "--horizon",
        "120",
        "--jobs",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert!(suite_out.contains("policy"), "{suite_out}");
    let results = out_dir.join("results.csv");
    let csv = std::fs::read_to_string(&results).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4, "header + 1 scene × 2 seeds × 2 policies");

    let report_out = run_ok(sentinel().args([
        "report",
        "--results",
        results.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert!(report_out.contains("oracle_dz"), "{report_out}");
    assert!(out_dir.join("summary.txt").exists());
}

#[test]
fn config_errors_exit_nonzero() {
    // unknown policy
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    run_ok(sentinel().args([
        "gen-scene",
        "--out",
        scene.to_str().unwrap(),
        "--blocks-x",
        "2",
        "--blocks-y",
        "2",
        "--places",
        "50",
        "--agents",
        "2",
        "--sentinels",
        "0",
        "--seed",
        "1",
    ]));
    let out = sentinel()
        .args([
            "run",
            "--scene",
            scene.to_str().unwrap(),
            "--policy",
            "definitely-not-a-policy",
            "--agents",
            "2",
            "--sentinels",
            "0",
            "--horizon",
            "10",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());

    // missing scene file
    let out = sentinel()
        .args(["validate", "--scene", "/nonexistent/scene.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
