use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Stdio};

use pps_core::{write_buffer, ActionVec, ReplayBuffer, StateVec, Transition};

fn pps() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pps"));
    c.env_remove("PPS_CONFIG");
    c
}

fn record_value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no `{key}` in:\n{text}"))
        .to_string()
}

/// Writes a buffer whose visited states are exactly `states`.
fn chain_buffer(env: &str, states: &[Vec<f64>], path: &Path) {
    let mut buf = ReplayBuffer::new(env, 0);
    for w in states.windows(2) {
        buf.push(Transition {
            s: StateVec::from_slice(&w[0]),
            a: ActionVec::from_slice(&[0.0]),
            r: 0.0,
            s_next: StateVec::from_slice(&w[1]),
            done: false,
        })
        .unwrap();
    }
    write_buffer(&buf, path).unwrap();
}

fn coverage_of(path: &Path) -> (String, std::process::ExitStatus) {
    let out = pps().arg("coverage").arg(path).output().unwrap();
    (String::from_utf8(out.stdout).unwrap(), out.status)
}

#[test]
fn zero_budget_gives_zero_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let out = pps()
        .args(["explore", "--env", "doubleint", "--seeds", "1", "--budget", "0", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = String::from_utf8(out.stdout).unwrap();
    assert_eq!(record_value(&summary, "coverage_median"), "0");
    let (report, status) = coverage_of(&dir.path().join("seed-0.buffer.csv"));
    assert!(status.success());
    assert_eq!(record_value(&report, "coverage"), "0");
    assert_eq!(record_value(&report, "samples"), "0");
    for f in ["manifest.txt", "summary.txt", "coverage.csv", "seed-0.coverage.txt"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn coverage_of_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.csv");
    // doubleint box is [-10,10] x [-2.5,2.5]; 100 states fill a 5x5 grid
    let states: Vec<Vec<f64>> = (0..100)
        .map(|k| {
            let (i, j) = ((k % 5) as f64, ((k / 5) % 5) as f64);
            vec![-10.0 + 4.0 * (i + 0.5), -2.5 + (j + 0.5)]
        })
        .collect();
    chain_buffer("doubleint", &states, &path);
    let (report, status) = coverage_of(&path);
    assert!(status.success());
    assert_eq!(record_value(&report, "divisions"), "5");
    assert_eq!(record_value(&report, "nonempty"), "25");
    assert_eq!(record_value(&report, "coverage").parse::<f64>().unwrap(), 1.0);
}

#[test]
fn coverage_of_sparse_four_dimensional_buffer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sparse.csv");
    let pi = std::f64::consts::PI;
    let half = [pi, pi, 4.0 * pi, 9.0 * pi];
    let corners: Vec<Vec<f64>> = (0..16u32)
        .map(|b| (0..4).map(|i| if b >> i & 1 == 1 { half[i] / 2.0 } else { -half[i] / 2.0 }).collect())
        .collect();
    let states: Vec<Vec<f64>> = (0..15).map(|k| corners[k % 10].clone()).collect();
    chain_buffer("acrobot", &states, &path);
    let (report, status) = coverage_of(&path);
    assert!(status.success());
    assert_eq!(record_value(&report, "total_bins"), "16");
    let c: f64 = record_value(&report, "coverage").parse().unwrap();
    assert!((c - 2.0 / 3.0).abs() < 1e-12, "{c}");
}

#[test]
fn malformed_buffer_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(
        &path,
        "# pps-buffer v1\nversion=1\nenv=doubleint\nd=2\nm=1\ncount=2\nseed=0\n\
         reward_mean=0\nreward_std=0\nreward_degenerate=1\n\n0,0,0,0,0,0,0\n",
    )
    .unwrap();
    let out = pps().arg("coverage").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    let missing = pps().arg("coverage").arg(dir.path().join("nope.csv")).output().unwrap();
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    let out = pps().args(["explore", "--env", "doubleint"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = pps().args(["serve", "--env", "doubleint"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = pps()
        .args(["explore", "--env", "cartpole", "--budget", "10", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cartpole"));
}

#[test]
fn serve_stdio_answers_spec_and_steps() {
    let mut child = pps()
        .args(["serve", "--env", "doubleint", "--stdio"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"{\"type\":\"spec\"}\n{\"type\":\"reset\",\"seed\":0}\n{\"type\":\"step\",\"action\":[1.0]}\n{\"type\":\"close\"}\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["type"], "spec");
    assert_eq!(lines[0]["d"], 2);
    assert_eq!(lines[0]["m"], 1);
    assert_eq!(lines[1]["type"], "state");
    assert_eq!(lines[2]["type"], "step_result");
    assert_eq!(lines[2]["s_next"][1], 0.05);
    assert_eq!(lines[3]["type"], "ack");
}

#[test]
fn serve_tcp_reports_port_and_rejects_a_taken_one() {
    let mut child = pps()
        .args(["serve", "--env", "mountaincar", "--tcp", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdout = BufReader::new(child.stdout.take().unwrap());
    let mut line = String::new();
    stdout.read_line(&mut line).unwrap();
    let port: u16 = line.trim().strip_prefix("port=").unwrap().parse().unwrap();
    assert_ne!(port, 0);

    let mut conn = TcpStream::connect(("127.0.0.1", port)).unwrap();
    conn.write_all(b"{\"type\":\"spec\"}\n{\"type\":\"close\"}\n").unwrap();
    let mut reader = BufReader::new(conn.try_clone().unwrap());
    let mut reply = String::new();
    reader.read_line(&mut reply).unwrap();
    let v: serde_json::Value = serde_json::from_str(&reply).unwrap();
    assert_eq!(v["d"], 2);

    let second = pps()
        .args(["serve", "--env", "mountaincar", "--tcp", &port.to_string()])
        .output()
        .unwrap();
    assert_eq!(second.status.code(), Some(3));

    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn explore_is_deterministic() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = pps()
            .args(["explore", "--env", "doubleint", "--seeds", "2", "--budget", "400", "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let a = std::fs::read(dir.path().join("seed-0.buffer.csv")).unwrap();
        let b = std::fs::read(dir.path().join("seed-1.buffer.csv")).unwrap();
        (a, b, out.stdout)
    };
    let (a0, b0, s0) = run();
    let (a1, b1, s1) = run();
    assert_eq!(a0, a1);
    assert_eq!(b0, b1);
    assert_eq!(s0, s1);
    assert_ne!(a0, b0);
}

#[test]
fn config_file_overrides_environment_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "this is not a config line\n").unwrap();
    let out = pps()
        .arg("--config")
        .arg(&bad)
        .args(["serve", "--env", "doubleint", "--stdio"])
        .stdin(Stdio::null())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let out = pps()
        .env("PPS_CONFIG", &bad)
        .args(["serve", "--env", "doubleint", "--stdio"])
        .stdin(Stdio::null())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    let good = dir.path().join("good.cfg");
    std::fs::write(&good, "# slower clock\ndoubleint.dt = 0.1\n").unwrap();
    let mut child = pps()
        .env("PPS_CONFIG", &good)
        .args(["serve", "--env", "doubleint", "--stdio"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"{\"type\":\"spec\"}\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(out.stdout.split(|&b| b == b'\n').next().unwrap()).unwrap();
    assert_eq!(v["dt"], 0.1);
}

#[test]
fn summary_recomputes_from_per_seed_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = pps()
        .args(["explore", "--env", "mountaincar", "--seeds", "4", "--budget", "300", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(record_value(&manifest, "seeds"), "0,1,2,3");
    let mut values: Vec<f64> = (0..4)
        .map(|k| {
            let rec = std::fs::read_to_string(record_value(&manifest, &format!("coverage.{k}"))).unwrap();
            assert!(Path::new(&record_value(&manifest, &format!("buffer.{k}"))).exists());
            record_value(&rec, "coverage").parse().unwrap()
        })
        .collect();
    values.sort_by(f64::total_cmp);
    // linear interpolation between order statistics, n = 4
    let q = |p: f64| {
        let pos = p * 3.0;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
    };
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    let get = |k: &str| record_value(&summary, k).parse::<f64>().unwrap();
    assert_eq!(get("coverage_median"), q(0.5));
    assert_eq!(get("coverage_q25"), q(0.25));
    assert_eq!(get("coverage_q75"), q(0.75));
    assert_eq!(get("coverage_iqr"), q(0.75) - q(0.25));
}

#[test]
fn serve_stdio_mountaincar_spec() {
    let mut child = pps()
        .args(["serve", "--env", "mountaincar", "--stdio"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"{\"type\":\"spec\"}\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!((v["d"].as_u64(), v["m"].as_u64()), (Some(2), Some(1)));
}
