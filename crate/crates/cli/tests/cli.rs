use std::path::Path;

use assert_cmd::Command;
use predicates::str::contains;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::cargo_bin("proactive-switch").unwrap();
    c.env_remove("PROACTIVE_SWITCH_HOME");
    c
}

const TINY: &str = r#"
seed = 3
[tie]
max_epochs = 2
lr = 0.001
batch_size = 8
[tie.encoder]
d_model = 16
layers = 1
heads = 2
ffn_mult = 2
[generator]
sentence_pretraining = 1
[generator.decoder]
d_model = 16
layers = 1
heads = 2
ffn_mult = 2
max_new_tokens = 12
[generator.unified]
max_epochs = 1
lr = 0.001
batch_size = 16
[generator.tsg]
max_epochs = 1
lr = 0.001
batch_size = 16
[generator.adapter]
bottleneck = 4
"#;

fn synth(dir: &Path, n: usize, seed: u64) -> std::path::PathBuf {
    let out = dir.join(format!("corpus-{n}-{seed}.json"));
    bin()
        .args(["synth", "--n", &n.to_string(), "--seed", &seed.to_string(), "--out"])
        .arg(&out)
        .assert()
        .success();
    out
}

#[test]
fn usage_errors_exit_2() {
    bin().arg("--help").assert().success().stdout(contains("eval-combined"));
    bin().arg("frobnicate").assert().code(2);
    bin().args(["synth", "--bogus"]).assert().code(2);
    bin().arg("synth").assert().code(2);
}

#[test]
fn synth_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = std::fs::read(synth(dir.path(), 30, 7)).unwrap();
    let b = std::fs::read(synth(dir.path(), 30, 7)).unwrap();
    let c = std::fs::read(synth(dir.path(), 30, 8)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let v: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["dialogues"].as_array().unwrap().len(), 30);
}

#[test]
fn runtime_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    bin()
        .args(["chat"])
        .assert()
        .code(1)
        .stderr(contains("PROACTIVE_SWITCH_HOME"));
    bin()
        .args(["chat", "--tie", "missing.ckpt", "--tsg", "missing.ckpt"])
        .assert()
        .code(1)
        .stderr(contains("missing.ckpt"));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    bin().args(["ingest", "--out", "x.json", "--input"]).arg(&bad).assert().code(1);
}

#[test]
fn augment_marks_transition_turns() {
    let dir = TempDir::new().unwrap();
    let corpus = synth(dir.path(), 20, 1);
    let out = dir.path().join("aug.json");
    bin().args(["augment", "--seed", "2", "--corpus"]).arg(&corpus).arg("--out").arg(&out).assert().success();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for d in v["dialogues"].as_array().unwrap() {
        let tr = &d["transition"];
        let text = d["turns"][tr["turn_index"].as_u64().unwrap() as usize]["text"].as_str().unwrap();
        assert_eq!(text.contains("[TRANSITION]"), tr["domain"] != "UNK", "{text}");
    }
}

#[test]
fn train_and_evaluate_end_to_end() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let corpus = synth(dir.path(), 40, 5);
    let home = dir.path().join("home");
    std::fs::create_dir(&home).unwrap();
    let run = |args: &[&str]| {
        let mut c = bin();
        c.env("PROACTIVE_SWITCH_HOME", &home).arg("--config").arg(&cfg).args(args);
        c
    };
    let c = corpus.to_str().unwrap();
    run(&["train-tie", "--corpus", c]).assert().success();
    run(&["train-tsg", "--corpus", c, "--adapter", "pfeiffer"]).assert().success();
    assert!(home.join("tie.ckpt").exists() && home.join("tsg.ckpt").exists());

    let tie_report = dir.path().join("tie.json");
    run(&["eval-tie", "--test", c, "--out", tie_report.to_str().unwrap()]).assert().success();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&tie_report).unwrap()).unwrap();
    assert!(v["semantic_acc"].is_number());

    let report = dir.path().join("combined.json");
    run(&["eval-combined", "--test", c, "--out", report.to_str().unwrap()])
        .assert()
        .success()
        .stderr(contains("Transition turns"));
    let first = std::fs::read(&report).unwrap();
    run(&["eval-combined", "--test", c, "--out", report.to_str().unwrap()]).assert().success();
    assert_eq!(first, std::fs::read(&report).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(v["meteor"], "N/A");
    assert_eq!(v["prompt_source"], "tie");

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, r#"{"dialogues": []}"#).unwrap();
    let out = run(&["eval-combined", "--test", empty.to_str().unwrap()]).assert().success();
    let v: serde_json::Value = serde_json::from_slice(&out.get_output().stdout).unwrap();
    assert_eq!(v["dialogues"], 0);

    run(&["chat"]).write_stdin("hello there\n\n").assert().success().stdout(contains("sys> "));
}
