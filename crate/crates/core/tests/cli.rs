use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use npr_retarget::robot::RobotModel;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_npr-retarget"))
}

fn wave() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wave.jsonl")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = "seed = 3\n[train]\nepochs = 2\nhidden = 8\nbatch_size = 128\n";

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.jsonl");
    let o = run(&["retarget", p(&wave()), "-o", p(&out), "--solver", "asn"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&run(&["randomize", "--count", "0"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nbatch_size = 1\n").unwrap();
    assert_eq!(code(&run(&["--config", p(&cfg), "inspect"])), 1);
}

#[test]
fn randomize_is_reproducible() {
    let a = run(&["--seed", "5", "randomize", "--count", "3"]);
    let b = run(&["--seed", "5", "randomize", "--count", "3"]);
    assert_eq!(code(&a), 0);
    assert_eq!(stdout(&a).lines().count(), 3);
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["--seed", "6", "randomize", "--count", "3"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn inspect_lists_joints() {
    let o = run(&["inspect"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("joints 22") && text.contains("commands 21"), "{text}");
    assert!(text.contains("RElbowRoll"));
}

#[test]
fn eval_of_zero_commands_tracks_and_bad_files_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let model = RobotModel::nao();
    let names = model.command_names();
    let cmds = dir.path().join("zero.jsonl");
    let mut text = serde_json::json!({"robot": model.name, "fps": 20.0, "joints": names}).to_string();
    for _ in 0..10 {
        text.push('\n');
        text.push_str(&serde_json::to_string(&vec![0.0; 21]).unwrap());
    }
    fs::write(&cmds, &text).unwrap();
    let out = dir.path().join("eval");
    let o = run(&["eval", p(&cmds), "-o", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rmse = fs::read_to_string(out.join("rmse.csv")).unwrap();
    assert_eq!(rmse.lines().count(), 22);
    for line in rmse.lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(v < 1e-3, "{line}");
    }
    assert!(out.join("report.json").exists() && out.join("trace.csv").exists());

    fs::write(&cmds, text.replacen("[0.0,", "[oops,", 1)).unwrap();
    assert_eq!(code(&run(&["eval", p(&cmds), "-o", p(&out)])), 2);
    assert_eq!(code(&run(&["eval", p(&dir.path().join("missing.jsonl")), "-o", p(&out)])), 2);
}

#[test]
fn train_is_deterministic_and_params_drive_retarget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let a = dir.path().join("a.asnp");
    let b = dir.path().join("b.asnp");
    for out in [&a, &b] {
        let o = run(&["--config", p(&cfg), "train", "-o", p(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let csv = fs::read_to_string(dir.path().join("a.loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1 + 2);

    let cmds = dir.path().join("wave_cmds.jsonl");
    let o = run(&["--config", p(&cfg), "retarget", p(&wave()), "-o", p(&cmds), "--solver", "asn", "--params", p(&a)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&cmds).unwrap().lines().count(), 41);
    let losses = fs::read_to_string(dir.path().join("wave_cmds.loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 41);

    let mut bytes = fs::read(&a).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&b, bytes).unwrap();
    let o = run(&["retarget", p(&wave()), "-o", p(&cmds), "--solver", "asn", "--params", p(&b)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn oracle_retarget_of_wave_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cmds = dir.path().join("wave_cmds.jsonl");
    let o = run(&["retarget", p(&wave()), "-o", p(&cmds)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let losses = fs::read_to_string(dir.path().join("wave_cmds.loss.csv")).unwrap();
    for line in losses.lines().skip(1) {
        let l: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(l < 1e-6, "{line}");
    }
    let out = dir.path().join("eval");
    assert_eq!(code(&run(&["eval", p(&cmds), "-o", p(&out)])), 0);
}
