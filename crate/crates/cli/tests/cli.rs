use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn instance(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../instances").join(name)
}

fn mopref(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mopref")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn validate_reports_dimensions() {
    let bandit = instance("bandit4.json");
    let out = mopref(&["validate", bandit.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("ok: 1 states, 5 actions, horizon 1, 3 objectives"), "{text}");
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"k": 0}"#).unwrap();
    assert_eq!(mopref(&["validate", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(mopref(&["validate", "/nonexistent/instance.json"]).status.code(), Some(1));

    let bandit = instance("bandit4.json");
    let out = mopref(&["plan", "--instance", bandit.to_str().unwrap(), "--weights", "1,1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected 3 weights"));

    assert_eq!(mopref(&["plan", "--instance", bandit.to_str().unwrap(), "--weights", "x"]).status.code(), Some(1));
    assert_eq!(mopref(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mopref(&["--help"]).status.code(), Some(0));
}

#[test]
fn plan_then_represent() {
    let commute = instance("commute.json");
    let plan = stdout_json(&mopref(&["plan", "--instance", commute.to_str().unwrap(), "--weights", "1,0.5"]));
    let dir = tempfile::tempdir().unwrap();
    let policy = dir.path().join("policy.json");
    std::fs::write(&policy, plan["policy"].to_string()).unwrap();
    let value: Vec<f64> = serde_json::from_value(plan["value"].clone()).unwrap();
    let scalar = plan["scalarized_value"].as_f64().unwrap();
    assert!((value[0] + 0.5 * value[1] - scalar).abs() < 1e-12);

    for method in [&["--method", "expand"][..], &["--method", "flow"], &["--method", "flow", "--no-compress"]] {
        let mut args = vec!["trajset", "--instance", commute.to_str().unwrap(), "--policy", policy.to_str().unwrap()];
        args.extend_from_slice(method);
        let set = stdout_json(&mopref(&args));
        let items = set["items"].as_array().unwrap();
        if !method.contains(&"--no-compress") {
            assert!(items.len() <= 3);
        }
        let total: f64 = items.iter().map(|i| i["weight"].as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mean: Vec<f64> = (0..2)
            .map(|j| items.iter().map(|i| i["weight"].as_f64().unwrap() * i["return"][j].as_f64().unwrap()).sum())
            .collect();
        for j in 0..2 {
            assert!((mean[j] - value[j]).abs() <= 1e-8);
        }
    }
}

#[test]
fn elicit_finds_the_best_arm() {
    let bandit = instance("bandit4.json");
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("report.json");
    let transcript = dir.path().join("transcript.jsonl");
    let user = dir.path().join("user.json");
    std::fs::write(&user, r#"{"preference": [1.0, 1.0, 1.0]}"#).unwrap();
    for (mode, rep) in [("full", "explicit"), ("truncated", "trajset")] {
        let out = mopref(&[
            "elicit",
            "--instance",
            bandit.to_str().unwrap(),
            "--user",
            user.to_str().unwrap(),
            "--epsilon",
            "1e-6",
            "--mode",
            mode,
            "--representation",
            rep,
            "--out",
            out_path.to_str().unwrap(),
            "--transcript",
            transcript.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
        assert_eq!(doc["policy"]["steps"][0]["s0"], "a3");
        let diag = &doc["report"]["diagnostics"];
        assert!(diag["suboptimality"].as_f64().unwrap().abs() < 1e-12);
        assert_eq!(diag["exhaustive"], true);
        let lines = std::fs::read_to_string(&transcript).unwrap().lines().count();
        assert_eq!(lines as u64, doc["report"]["queries"]["total"].as_u64().unwrap());
    }

    let inline = mopref(&["elicit", "--instance", bandit.to_str().unwrap(), "--user", "1,1,1", "--epsilon", "1e-6"]);
    assert_eq!(stdout_json(&inline)["policy"]["steps"][0]["s0"], "a3");
    let negative = mopref(&["elicit", "--instance", bandit.to_str().unwrap(), "--user", "1,-1,1", "--epsilon", "0.1"]);
    assert_eq!(negative.status.code(), Some(1));
}

#[test]
fn experiments_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"seed": 9, "trials": 6, "states": [2, 4], "actions": [1, 3], "horizon": [1, 3],
            "objectives": [2, 3], "epsilons": [1e-2, 1e-5], "mode": "truncated", "representation": "trajectory_set"}"#,
    )
    .unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = mopref(&["experiment", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("nonincreasing"));
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    for file in ["trials.csv", "summary.csv", "summary.txt"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let trials = std::fs::read_to_string(a.join("trials.csv")).unwrap();
    assert!(trials.starts_with("# mopref-trials v1\n"));
    let rows = mopref::experiment::read_trials(&trials).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.within_cap() && r.invalid_payloads == 0 && r.suboptimality >= -1e-9));
    assert!(std::fs::read_to_string(a.join("timings.csv")).unwrap().starts_with("# mopref-timings v1\n"));
}

#[test]
fn experiment_config_and_output_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"seed": 1, "trials": 1, "states": 2, "actions": 1, "horizon": 1, "objectives": 2, "epsilons": [0]}"#,
    )
    .unwrap();
    let out = mopref(&["experiment", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(
        &config,
        r#"{"seed": 1, "trials": 1, "states": 2, "actions": 1, "horizon": 1, "objectives": 2, "epsilons": [0.1]}"#,
    )
    .unwrap();
    // The output path is an existing file, so writing results fails at run time.
    let blocker = dir.path().join("taken");
    std::fs::write(&blocker, "").unwrap();
    let out = mopref(&["experiment", "--config", config.to_str().unwrap(), "--out", blocker.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn serve_answers_health_checks() {
    let dir = tempfile::tempdir().unwrap();
    let bandit = instance("bandit4.json");
    let mut child = Command::new(env!("CARGO_BIN_EXE_mopref"))
        .args(["serve", "--port", "0", "--instance", bandit.to_str().unwrap(), "--data-dir"])
        .arg(dir.path().join("sessions"))
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.split_whitespace().nth(2).expect("listening line").to_string();

    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /healthz HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
}
