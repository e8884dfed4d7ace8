use std::path::Path;
use std::process::{Command, Output};

fn stepcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stepcast"))
        .args(args)
        .env_remove("STEPCAST_OUTPUT_ROOT")
        .output()
        .expect("run stepcast")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 8] = [
    "--set",
    "data.steps=60",
    "--set",
    "data.train=0..40",
    "--set",
    "data.test=40..60",
    "--set",
    "train.steps=3",
];

fn run_ok(cmd: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--out", p(out)];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    let o = stepcast(&args);
    assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn synth_data_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok("synth-data", &a, &["--seed", "7"]);
    run_ok("synth-data", &b, &["--seed", "7"]);
    let mut names: Vec<_> = std::fs::read_dir(a.join("data")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for n in &names {
        assert_eq!(std::fs::read(a.join("data").join(n)).unwrap(), std::fs::read(b.join("data").join(n)).unwrap());
    }
    let c = dir.path().join("c");
    run_ok("synth-data", &c, &["--seed", "8"]);
    let chunk = names.iter().find(|n| n.to_string_lossy().ends_with(".bin")).unwrap();
    assert_ne!(std::fs::read(a.join("data").join(chunk)).unwrap(), std::fs::read(c.join("data").join(chunk)).unwrap());
}

#[test]
fn flags_override_file_and_resolved_config_is_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.txt");
    std::fs::write(&cfg, "seed = 3\ntrain.lr = 0.004\ndata.steps = 30\n").unwrap();
    let out = dir.path().join("run");
    let o = stepcast(&["synth-data", "--config", p(&cfg), "--seed", "5", "--set", "train.lr=0.002", "--out", p(&out)]);
    assert!(o.status.success());
    let resolved = std::fs::read_to_string(out.join("synth-data.config.txt")).unwrap();
    assert!(resolved.starts_with("preset = toy\n"));
    for line in ["seed = 5", "train.lr = 0.002", "data.steps = 30", "train.batch_size = 4"] {
        assert!(resolved.lines().any(|l| l == line), "missing '{line}' in\n{resolved}");
    }
    // The persisted file reproduces the run when fed back in.
    let again = dir.path().join("again");
    let o = stepcast(&["synth-data", "--config", p(&out.join("synth-data.config.txt")), "--out", p(&again)]);
    assert!(o.status.success());
    let chunk = std::fs::read_dir(out.join("data"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .find(|n| n.to_string_lossy().ends_with(".bin"))
        .unwrap();
    assert_eq!(std::fs::read(out.join("data").join(&chunk)).unwrap(), std::fs::read(again.join("data").join(&chunk)).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(stepcast(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(stepcast(&["train", "--set", "nonsense"]).status.code(), Some(1));
    assert_eq!(stepcast(&["train", "--set", "train.bogus=1", "--out", p(dir.path())]).status.code(), Some(1));
    assert_eq!(stepcast(&["stats", "--out", p(&dir.path().join("empty"))]).status.code(), Some(2));
    assert_eq!(stepcast(&["--help"]).status.code(), Some(0));

    let run = dir.path().join("run");
    run_ok("synth-data", &run, &[]);
    std::fs::write(run.join("checkpoint.ckpt"), b"not a checkpoint").unwrap();
    let mut args = vec!["evaluate", "--out", p(&run)];
    args.extend_from_slice(&SMALL);
    assert_eq!(stepcast(&args).status.code(), Some(2));

    // A learning rate this large overflows within a few steps.
    let mut args = vec!["train", "--out", p(&run)];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(&["--set", "train.lr=1e30", "--set", "train.steps=20"]);
    let o = stepcast(&args);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn pipeline_commands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    run_ok("synth-data", &run, &[]);
    let stats = run_ok("stats", &run, &[]);
    assert!(String::from_utf8_lossy(&stats.stdout).contains("Z500"));
    run_ok("train", &run, &[]);
    run_ok("evaluate", &run, &["--jobs", "2"]);
    run_ok("rollout", &run, &["--init", "1"]);
    run_ok("compare-ema", &run, &[]);
    run_ok("dump-fields", &run, &["--set", "eval.variables=MSLP", "--leads", "6,12"]);
    run_ok("track", &run, &["--lat", "-30", "--lon", "200"]);
    for f in [
        "metrics.csv",
        "checkpoint.ckpt",
        "scores.csv",
        "persistence_scores.csv",
        "rollout.f32",
        "rollout.json",
        "ema_comparison.csv",
        "ema_comparison.json",
        "track.csv",
        "fields/MSLP_012h_bias.svg",
        "train.config.txt",
        "evaluate.config.txt",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    let floats = std::fs::metadata(run.join("rollout.f32")).unwrap().len();
    assert_eq!(floats, 9 * 8 * 16 * 32 * 4);
}

#[test]
fn report_compute_prints_reference_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = stepcast(&["report-compute", "--preset", "sonny-s", "--out", p(dir.path())]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("20.50M") && text.contains("96.81G"), "{text}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("compute.json")).unwrap()).unwrap();
    assert!(json["params"].as_u64().unwrap() > 18_000_000);
}
