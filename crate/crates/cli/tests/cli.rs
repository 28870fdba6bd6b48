use std::path::Path;
use std::process::{Command, Output};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deskresearch"))
        .current_dir(dir)
        .env_remove("DESKRESEARCH_POLICY")
        .env_remove("DESKRESEARCH_TOOLS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bin(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--seed", "1", "--n-tasks", "15", "-o", "a"]);
    ok(dir.path(), &["synth", "--seed", "1", "--n-tasks", "15", "-o", "b"]);
    ok(dir.path(), &["synth", "--seed", "2", "--n-tasks", "15", "-o", "c"]);
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/tasks.jsonl"), read("b/tasks.jsonl"));
    assert_eq!(read("a/corpus.jsonl"), read("b/corpus.jsonl"));
    assert_ne!(read("a/tasks.jsonl"), read("c/tasks.jsonl"));
    assert_eq!(String::from_utf8(read("a/tasks.jsonl")).unwrap().lines().count(), 15);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| bin(dir.path(), args).status.code();
    assert_eq!(code(&["--config", "missing.toml", "synth"]), Some(3));
    assert_eq!(code(&["--set", "no_such_key=1", "synth"]), Some(3));
    assert_eq!(code(&["rollout", "--question", "q"]), Some(4));
    assert_eq!(code(&["eval", "--tasks", "missing.jsonl", "--policy", "builtin:oracle", "--tools", "sim:x"]), Some(6));
    assert_eq!(code(&["merge", "--weights", "1"]), Some(2));
}

#[test]
fn eval_writes_metrics_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--seed", "3", "--n-tasks", "6", "-o", "data"]);
    let table = ok(
        d,
        &["eval", "--runs", "3", "--tasks", "data/tasks.jsonl", "--policy", "builtin:oracle", "--tools", "sim:data/corpus.jsonl"],
    );
    assert!(table.contains("Avg@3: 1.0000"), "{table}");
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["k"], 3);
    assert_eq!(metrics["questions"].as_array().unwrap().len(), 6);
    assert_eq!(metrics["pass_at_k"], 1.0);

    ok(d, &["eval", "--replay", "trajectories.jsonl", "-o", "replayed.json"]);
    let replayed: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("replayed.json")).unwrap()).unwrap();
    assert_eq!(replayed, metrics);
}

#[test]
fn collect_then_train_step() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--seed", "4", "--n-tasks", "8", "-o", "data"]);
    let tools = ["--policy", "builtin:prior", "--tools", "sim:data/corpus.jsonl"];
    ok(d, &[&["collect", "--tasks", "data/tasks.jsonl", "--group-size", "4"], &tools[..]].concat());
    ok(d, &["train-step", "--groups", "groups.jsonl"]);
    let table: Vec<f64> = serde_json::from_slice(&std::fs::read(d.join("policy_table.json")).unwrap()).unwrap();
    assert_eq!(table.len(), 72);
    assert!(table.iter().all(|x| x.is_finite()));
}

#[test]
fn merge_example() {
    use deskresearch::merge::{read_tensors, write_tensors, ParamSet};
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let set = |v: [f64; 2]| ParamSet::new().with("w", vec![2], v.to_vec()).unwrap();
    write_tensors(&d.join("a.bin"), &set([1.0, 0.0])).unwrap();
    write_tensors(&d.join("b.bin"), &set([0.0, 1.0])).unwrap();
    ok(d, &["merge", "--weights", "0.25,0.75", "a.bin", "b.bin", "-o", "m.bin"]);
    let merged = read_tensors::<f64>(&d.join("m.bin")).unwrap();
    assert_eq!(merged.get("w").unwrap().data, vec![0.25, 0.75]);

    let out = bin(d, &["merge", "--weights", "0.5,0.6", "a.bin", "b.bin", "-o", "bad.bin"]);
    assert_eq!(out.status.code(), Some(6));
}
