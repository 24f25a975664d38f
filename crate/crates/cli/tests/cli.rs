use std::path::Path;
use std::process::{Command, Output};

fn kadapt(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kadapt"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

const TINY: [&str; 18] = [
    "--set", "data.synthetic.entities=30",
    "--set", "data.synthetic.triples=60",
    "--set", "encoder.layers=1",
    "--set", "encoder.dim=16",
    "--set", "encoder.heads=2",
    "--set", "encoder.ff_dim=32",
    "--set", "pretrain.steps=10",
    "--set", "adapters.steps=3",
    "--set", "adapters.batch=8",
];

#[test]
fn print_config_shows_resolved_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = kadapt(dir.path(), &["--profile", "paper", "--seed", "9", "--print-config", "report"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("profile = \"paper\""));
    assert!(text.contains("seed = 9"));
    assert!(text.contains("dim = 768"));
}

#[test]
fn config_file_is_layered_under_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.toml");
    std::fs::write(&file, "[pretrain]\nsteps = 42\nbatch = 4\n").unwrap();
    let out = kadapt(dir.path(), &["--config", file.to_str().unwrap(), "--set", "pretrain.batch=6", "--print-config", "pretrain"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("steps = 42") && text.contains("batch = 6"), "{text}");
}

#[test]
fn invalid_configuration_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kadapt(dir.path(), &["--set", "encoder.heads=5", "pretrain"]).status.code(), Some(1));
    assert_eq!(kadapt(dir.path(), &["--config", "/nonexistent.toml", "pretrain"]).status.code(), Some(1));
    assert_eq!(kadapt(dir.path(), &["eval", "--task", "alignment", "--variant", "XX"]).status.code(), Some(1));
}

#[test]
fn missing_stage_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = kadapt(dir.path(), &["train-fusion", "--task", "alignment"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = kadapt(dir.path(), &["train-adapter", "--kind", "xl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("invalid value"));
}

#[test]
fn stages_run_in_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let all: Vec<&str> = TINY.iter().copied().chain(args.iter().copied()).collect();
        let out = kadapt(dir.path(), &all);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    run(&["gen-synthetic"]);
    let pretrain = run(&["pretrain"]);
    assert!(pretrain.contains("checkpoint "));
    run(&["train-adapter", "--kind", "ep"]);
    run(&["finetune", "--task", "completion", "--variant", "EP"]);
    let eval = run(&["eval", "--task", "completion", "--variant", "EP"]);
    assert!(eval.contains("EP completion: hit@1"), "{eval}");
    run(&["report"]);
    assert!(dir.path().join("report.tsv").is_file());
    assert!(dir.path().join("run_log.jsonl").is_file());
}
