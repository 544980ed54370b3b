use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn feedfuse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feedfuse"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn feedfuse")
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL: &str = "\
data.n = 300
train.epochs = 2
grid.dimensions = praise
grid.seeds = 0
out.dir = out
";

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = feedfuse(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.conf"), "train.nonsense = 3\n").unwrap();
    let o = feedfuse(&["grid", "--config", "bad.conf"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key"));
}

#[test]
fn gen_data_writes_one_line_per_instance() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&feedfuse(
        &["gen-data", "--n", "120", "--seed", "3", "--out", "data"],
        dir.path(),
    ));
    let text = fs::read_to_string(dir.path().join("data/manifest.jsonl")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.trim().is_empty()).count(), 120);
}

#[test]
fn train_evaluate_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("small.conf"), SMALL).unwrap();
    let train = |model: &str, strategy: &str| {
        stdout(&feedfuse(
            &[
                "train",
                "--config",
                "small.conf",
                "--dimension",
                "praise",
                "--model",
                model,
                "--strategy",
                strategy,
            ],
            root,
        ))
    };
    let out = train("feature", "staged");
    assert!(out.contains("checkpoint:"), "{out}");
    train("text", "individual");
    train("audio", "individual");

    let results = fs::read_to_string(root.join("out/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 3);

    let ckpt = fs::read_dir(root.join("out/checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().contains("feature"))
        .expect("feature checkpoint");

    stdout(&feedfuse(
        &["gen-data", "--n", "80", "--seed", "9", "--out", "holdout"],
        root,
    ));
    let eval = stdout(&feedfuse(
        &[
            "evaluate",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            "holdout/manifest.jsonl",
        ],
        root,
    ));
    let v: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert_eq!(v["n"], 80);
    let auc = v["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));

    let md = stdout(&feedfuse(&["report", "--results", "out"], root));
    assert!(md.lines().next().unwrap().starts_with("| Model |"));
    assert!(md.contains("| Staged-Feature |"));

    let cmp = stdout(&feedfuse(&["compare", "out", "out"], root));
    let mut lines = cmp.lines();
    assert!(lines.next().unwrap().starts_with("group,"));
    for l in lines {
        assert!(l.contains(",0.0%,"), "{l}");
    }
}

#[test]
fn train_rejects_unsupported_strategy() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.conf"), SMALL).unwrap();
    let o = feedfuse(
        &[
            "train",
            "--config",
            "small.conf",
            "--dimension",
            "praise",
            "--model",
            "text",
            "--strategy",
            "joint",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}
