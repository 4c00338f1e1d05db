use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn privgen(args: &[&str], threads: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_privgen"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads.to_string())
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

#[test]
fn compose_prints_report() {
    let out = privgen(
        &[
            "compose", "--eps", "0.1", "--delta", "1e-8", "--steps", "100", "--slack", "1e-6",
        ],
        1,
    );
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    let eps = r["outputs"]["eps_prime"].as_f64().unwrap();
    assert!((eps - 5.756105519335732).abs() < 1e-12);
    assert_eq!(r["inputs"]["steps"], 100);
}

#[test]
fn exit_codes() {
    let low_n = privgen(
        &["bound", "--eps", "0.1", "--delta", "1e-6", "--n", "100"],
        1,
    );
    assert_eq!(low_n.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&low_n.stderr).contains("3338"));

    let bad = privgen(
        &["compose", "--eps", "-1", "--delta", "0", "--steps", "3"],
        1,
    );
    assert_eq!(bad.status.code(), Some(2));

    let degenerate = privgen(
        &[
            "compose",
            "--eps",
            "1",
            "--delta",
            "0.1",
            "--steps",
            "20",
            "--method",
            "dwork-basic",
        ],
        1,
    );
    assert_eq!(degenerate.status.code(), Some(4));

    let cap = privgen(
        &[
            "oracle", "--eps", "0.1", "--delta", "1e-6", "--steps", "20000",
        ],
        1,
    );
    assert_eq!(cap.status.code(), Some(2));
}

#[test]
fn config_file_and_output_path() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let config = dir.path().join("run.json");
    fs::write(
        &config,
        serde_json::json!({
            "command": "bound",
            "params": {"eps": 0.1, "delta": 1e-6, "N": 5000},
            "seed": 3,
            "output": report.to_str().unwrap(),
        })
        .to_string(),
    )
    .unwrap();
    let out = privgen(&["--config", config.to_str().unwrap()], 1);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!((r["outputs"]["gap"].as_f64().unwrap() - 0.9).abs() < 1e-15);

    fs::write(
        &config,
        r#"{"command": "bound", "params": {}, "colour": 1}"#,
    )
    .unwrap();
    assert_eq!(
        privgen(&["--config", config.to_str().unwrap()], 1)
            .status
            .code(),
        Some(2)
    );
    fs::write(&config, "not json").unwrap();
    assert_eq!(
        privgen(&["--config", config.to_str().unwrap()], 1)
            .status
            .code(),
        Some(2)
    );
    let missing = dir.path().join("absent.json");
    assert_eq!(
        privgen(&["--config", missing.to_str().unwrap()], 1)
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn missing_required_parameter() {
    let out = privgen(&["bound", "--eps", "0.1", "--delta", "1e-6"], 1);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trace_csv_written_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let out = privgen(
        &[
            "simulate",
            "--lipschitz",
            "1",
            "--sigma",
            "1",
            "--tau",
            "10",
            "--n",
            "200",
            "--steps",
            "5",
            "--per-step-delta",
            "1e-5",
            "--dim",
            "2",
            "--n-test",
            "50",
            "--seed",
            "11",
            "--output",
            path.to_str().unwrap(),
        ],
        1,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("step,train_risk,test_risk"));
    assert_eq!(lines.count(), 6);
    assert_eq!(json(&out)["command"], "simulate");
}

fn assert_deterministic(args: &[&str]) {
    let base = privgen(args, 1);
    assert_eq!(
        base.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&base.stderr)
    );
    for threads in [1, 4] {
        let again = privgen(args, threads);
        assert_eq!(again.stdout, base.stdout, "{args:?} with {threads} threads");
    }
}

#[test]
fn seeded_commands_are_byte_identical() {
    assert_deterministic(&[
        "simulate",
        "--lipschitz",
        "1",
        "--sigma",
        "1",
        "--tau",
        "10",
        "--n",
        "200",
        "--steps",
        "20",
        "--per-step-delta",
        "1e-5",
        "--dim",
        "3",
        "--n-test",
        "100",
        "--seed",
        "5",
    ]);
    assert_deterministic(&[
        "simulate",
        "--algorithm",
        "fed",
        "--num-clients",
        "6",
        "--tau",
        "3",
        "--sigma",
        "0.1",
        "--steps",
        "10",
        "--per-step-delta",
        "1e-5",
        "--dim",
        "2",
        "--client-train",
        "20",
        "--client-test",
        "20",
        "--seed",
        "9",
    ]);
    assert_deterministic(&[
        "simulate",
        "--algorithm",
        "gap",
        "--lipschitz",
        "1",
        "--sigma",
        "0.6",
        "--tau",
        "20",
        "--n",
        "4000",
        "--steps",
        "50",
        "--per-step-delta",
        "1e-5",
        "--trials",
        "6",
        "--dim",
        "2",
        "--n-test",
        "500",
        "--seed",
        "2",
    ]);
    assert_deterministic(&[
        "oracle",
        "--query",
        "tail",
        "--sigma",
        "2",
        "--shift-norm",
        "0.03",
        "--threshold",
        "0.01",
        "--trials",
        "20000",
        "--seed",
        "4",
    ]);
    assert_deterministic(&[
        "sweep",
        "--command",
        "compose",
        "--axis",
        "steps=1,2,5,10,20",
        "--axis",
        "eps=0.05,0.2",
        "--fixed",
        "delta=1e-6",
        "--fixed",
        "method=ours-moment",
    ]);
}

#[test]
fn seed_changes_simulation() {
    let args = |seed: &'static str| {
        [
            "simulate",
            "--lipschitz",
            "1",
            "--sigma",
            "1",
            "--tau",
            "10",
            "--n",
            "200",
            "--steps",
            "5",
            "--per-step-delta",
            "1e-5",
            "--dim",
            "2",
            "--n-test",
            "50",
            "--seed",
            seed,
        ]
    };
    assert_ne!(privgen(&args("1"), 1).stdout, privgen(&args("2"), 1).stdout);
}
