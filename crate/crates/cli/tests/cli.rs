use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn termforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_termforge"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json_out(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&stdout(o)).expect("json on stdout")
}

fn write(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

fn full_task(root: &Path, id: &str) {
    let t = root.join(id);
    write(&t.join("instruction.md"), "Create /app/hello.txt containing hello.\n");
    write(&t.join("task.toml"), "difficulty = \"easy\"\n");
    write(&t.join("environment/Dockerfile"), "FROM python:3.11-slim\nWORKDIR /app\n");
    write(&t.join("solution/solve.sh"), "echo hello > /app/hello.txt\n");
    write(
        &t.join("tests/test_outputs.py"),
        "def test_hello():\n    assert open('/app/hello.txt').read() == 'hello\\n'\n",
    );
}

const DONE: &str = r#"{"analysis": "ready", "plan": "write file", "commands": [{"keystrokes": "echo hello > hello.txt\n", "duration": 0.1}], "task_complete": true}"#;

fn mock_file(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("mock.jsonl");
    write(&p, &format!("{}\n", json!({"response": DONE})));
    p
}

fn script_file(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("script.jsonl");
    write(&p, "{\"after_send_index\": 0, \"text\": \"$ \"}\n");
    p
}

#[test]
fn validate_accepts_a_complete_task() {
    let dir = tempfile::tempdir().unwrap();
    full_task(dir.path(), "hello-task");
    let o = termforge(&["validate", dir.path().join("hello-task").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("ok   hello-task"));
}

#[test]
fn validate_reports_invalid_tasks() {
    let dir = tempfile::tempdir().unwrap();
    full_task(dir.path(), "Bad_Id");
    let o = termforge(&["validate", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL Bad_Id"));
}

#[test]
fn usage_errors_exit_two() {
    let o = termforge(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(termforge(&["adapt", "--out", "x"]).status.code(), Some(2));
    assert_eq!(termforge(&[]).status.code(), Some(2));
}

#[test]
fn fatal_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = termforge(&[
        "rollout",
        "--tasks",
        dir.path().join("missing").to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "--mock",
        mock_file(dir.path()).to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn rollout_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..3 {
        full_task(&dir.path().join("tasks"), &format!("t-{i}"));
    }
    mock_file(dir.path());
    script_file(dir.path());
    let cfg = dir.path().join("c.json");
    write(
        &cfg,
        &json!({
            "tasks_dir": "tasks",
            "output_dir": "out",
            "model": {"kind": "mock", "path": "mock.jsonl"},
            "session": {"backend": "scripted", "script": "script.jsonl"},
            "workers": 2,
            "seed": "${TF_TEST_SEED}"
        })
        .to_string(),
    );
    // Interpolation makes the seed a string, which the schema rejects.
    let o = Command::new(env!("CARGO_BIN_EXE_termforge"))
        .args(["--config", cfg.to_str().unwrap(), "rollout"])
        .env("TF_TEST_SEED", "3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));

    let mut v: Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    v["seed"] = json!(3);
    v["model"]["path"] = json!("${TF_TEST_MOCK}");
    write(&cfg, &v.to_string());
    let o = Command::new(env!("CARGO_BIN_EXE_termforge"))
        .args(["--config", cfg.to_str().unwrap(), "rollout", "--workers", "8"])
        .env("TF_TEST_MOCK", "mock.jsonl")
        .output()
        .unwrap();
    let report = json_out(&o);
    assert_eq!(report["workers"], 8);
    assert_eq!(report["statuses"]["completed"], 3);
    assert!(dir.path().join("out/trajs/t-0/0.json").is_file());
    assert!(dir.path().join("out/trajs/t-0/0.status").is_file());
}

#[test]
fn pipeline_from_prompts_to_samples() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    write(
        &dir.path().join("records.jsonl"),
        &[
            json!({"id": "m1", "kind": "math", "prompt": "What is 2+2?"}),
            json!({"id": "c1", "kind": "code", "prompt": "Write a function that reverses a string."}),
            json!({"id": "bad", "kind": "math", "prompt": "  "}),
        ]
        .map(|v| v.to_string())
        .join("\n"),
    );
    let summary = json_out(&termforge(&["adapt", "--input", &d("records.jsonl"), "--out", &d("tasks")]));
    assert_eq!(summary["written"]["math"], 1);
    assert_eq!(summary["failures"].as_array().unwrap().len(), 1);
    assert_eq!(termforge(&["validate", &d("tasks")]).status.code(), Some(0));

    mock_file(dir.path());
    script_file(dir.path());
    let report = json_out(&termforge(&[
        "rollout",
        "--tasks",
        &d("tasks"),
        "--out",
        &d("out"),
        "--mock",
        &d("mock.jsonl"),
        "--script",
        &d("script.jsonl"),
        "--trials",
        "2",
    ]));
    assert_eq!(report["planned"], 4);
    assert_eq!(report["statuses"]["completed"], 4);

    let counts = json_out(&termforge(&["filter", "--input", &d("out"), "--out", &d("kept.jsonl"), "--complete-only", "--quality"]));
    assert_eq!(counts["input"], 4);
    assert_eq!(counts["quality"], 4);

    let o = termforge(&["stats", "--input", &d("kept.jsonl")]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("# turns\nbin_start\tcount\n1\t4\n"));

    let exported = json_out(&termforge(&["export", "--input", &d("kept.jsonl"), "--out", &d("sft.jsonl")]));
    assert_eq!(exported["written"], 4);
    let first: Value = serde_json::from_str(fs::read_to_string(d("sft.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["meta"]["v"], 1);
    assert_eq!(first["messages"][1]["role"], "assistant");

    write(
        &dir.path().join("mix.json"),
        &json!({"strategy": "curriculum", "parts": [{"path": "sft.jsonl", "stage": 1}]}).to_string(),
    );
    let mixed = json_out(&termforge(&["export", "--mixture", &d("mix.json"), "--out", &d("mix.jsonl")]));
    assert_eq!(mixed["written"], 4);

    let o = termforge(&["eval", "--input", &d("out")]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "0.0 ± 0.0");

    write(&dir.path().join("bench.jsonl"), &json!({"question": "so what is 2+2? please answer"}).to_string());
    let dc = json_out(&termforge(&[
        "decontaminate",
        "--input",
        &d("records.jsonl"),
        "--benchmark",
        &d("bench.jsonl"),
        "--out",
        &d("clean.jsonl"),
        "--report",
        &d("removed.jsonl"),
        "--n",
        "3",
    ]));
    assert_eq!(dc["removed"], 1);
    let removed: Value = serde_json::from_str(fs::read_to_string(d("removed.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(removed, json!({"id": "m1", "witness_window": "what is 2+2?"}));
    assert_eq!(fs::read_to_string(d("clean.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn generate_skill_with_mock() {
    let dir = tempfile::tempdir().unwrap();
    let reply = "<prompt>\nSort /app/data/in.txt numerically into /app/out.txt.\n</prompt>\n<tests>\ndef test_sorted():\n    assert open('/app/out.txt').read().split() == ['1', '2']\n</tests>\n<files>\n--- path: data/in.txt\n2\n1\n</files>";
    let mock = dir.path().join("gen.jsonl");
    write(&mock, &format!("{}\n", json!({"response": reply})));
    let out = dir.path().join("gen");
    let summary = json_out(&termforge(&[
        "generate",
        "skill",
        "--out",
        out.to_str().unwrap(),
        "--count",
        "3",
        "--domains",
        "data_processing,security",
        "--mock",
        mock.to_str().unwrap(),
    ]));
    assert_eq!(summary["written"].as_array().unwrap().len(), 3);
    assert_eq!(termforge(&["validate", out.to_str().unwrap()]).status.code(), Some(0));
}
