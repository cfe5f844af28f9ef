//! End-to-end runs of the `rain` binary over a small synthetic experiment.

use std::path::PathBuf;
use std::process::{Command, Output};

fn rain() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rain"))
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("run.json");
        let body = serde_json::json!({
            "data": {
                "jsonl": root.join("data/dialogues.jsonl"),
                "splits": root.join("data/splits.json"),
                "synthetic": { "seed": 11, "n_dialogues": 42 }
            },
            "model": { "hidden_dim": 8, "embed_dim": 6 },
            "train": { "learning_rate": 0.003, "batch_size": 4, "epochs": 2, "seed": 42 },
            "output": root.join("out")
        });
        std::fs::write(&config, serde_json::to_string_pretty(&body).unwrap()).unwrap();
        Workspace {
            _dir: dir,
            root,
            config,
        }
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut cmd = rain();
        cmd.arg(args[0]).arg("--config").arg(&self.config);
        for a in &args[1..] {
            cmd.arg(a);
        }
        cmd.output().expect("binary runs")
    }

    fn run_ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "command {:?} failed\nstdout: {}\nstderr: {}",
            args,
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let ws = Workspace::new();

    let msg = ws.run_ok(&["gen-data"]);
    assert!(msg.contains("42 dialogues"), "{msg}");
    assert!(ws.root.join("data/dialogues.jsonl").exists());
    assert!(ws.root.join("data/splits.json").exists());

    let msg = ws.run_ok(&["build-dict"]);
    assert!(ws.root.join("out/dict.json").exists(), "{msg}");

    let msg = ws.run_ok(&["train"]);
    assert!(msg.contains("best epoch"), "{msg}");
    assert!(ws.root.join("out/rain.ckpt").exists());
    let csv = std::fs::read_to_string(ws.root.join("out/epochs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header + one row per epoch:\n{csv}");

    let report = ws.run_ok(&["eval", "--split", "dev"]);
    let parsed: serde_json::Value = serde_json::from_str(&report).expect("eval prints JSON");
    assert!(parsed["intention"]["macro_f1"].is_number());
    assert!(parsed["emotion"]["confusion"].is_array());

    // predictions on a fresh unlabeled file
    let input = ws.root.join("unlabeled.jsonl");
    std::fs::write(
        &input,
        concat!(
            r#"{"id":"q1","utterances":[{"speaker":"A","text":"Well i would like the coffee ."},"#,
            r#"{"speaker":"B","text":"Sounds good friend ."}]}"#,
            "\n"
        ),
    )
    .unwrap();
    ws.run_ok(&["predict", "--input", input.to_str().unwrap()]);
    let predictions = std::fs::read_to_string(ws.root.join("out/predictions.jsonl")).unwrap();
    let line: serde_json::Value = serde_json::from_str(predictions.lines().next().unwrap()).unwrap();
    let utts = line["utterances"].as_array().unwrap();
    assert_eq!(utts.len(), 2);
    for u in utts {
        assert!(u["intention"].is_string());
        assert!(u["emotion"].is_string());
        assert_eq!(u["p_intention"].as_array().unwrap().len(), 7);
        assert_eq!(u["p_emotion"].as_array().unwrap().len(), 6);
    }

    // explanations on the same file
    let out = ws.root.join("explanations.txt");
    ws.run_ok(&["explain", "--input", input.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("because his intention is"), "{text}");

    // reproducibility: re-running predict overwrites the file identically
    let before = std::fs::read(ws.root.join("out/predictions.jsonl")).unwrap();
    ws.run_ok(&["predict", "--input", input.to_str().unwrap()]);
    let after = std::fs::read(ws.root.join("out/predictions.jsonl")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn gradcheck_passes_on_the_tiny_config() {
    let ws = Workspace::new();
    let msg = ws.run_ok(&["gradcheck"]);
    assert!(msg.contains("gradcheck passed"), "{msg}");
}

#[test]
fn config_errors_exit_2() {
    let ws = Workspace::new();
    // unknown key in the config file
    let bad = ws.root.join("bad.json");
    std::fs::write(&bad, r#"{"modle": {}}"#).unwrap();
    let out = rain()
        .args(["train", "--config", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);

    // invalid --set override type
    let out = ws.run(&["train", "--set", "train.epochs=oops"]);
    assert_eq!(exit_code(&out), 2);

    // clap usage errors also exit 2
    let out = rain().arg("train").output().unwrap();
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn data_errors_exit_3() {
    let ws = Workspace::new();
    // no data generated yet
    let out = ws.run(&["train"]);
    assert_eq!(exit_code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));

    // eval without a checkpoint
    ws.run_ok(&["gen-data"]);
    let out = ws.run(&["eval"]);
    assert_eq!(exit_code(&out), 3);
}

#[test]
fn help_lists_every_flag_with_defaults() {
    let out = rain().arg("--help").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in [
        "gen-data", "build-dict", "train", "eval", "ablate", "predict", "explain", "gradcheck",
    ] {
        assert!(text.contains(sub), "missing {sub} in:\n{text}");
    }
    let out = rain().args(["eval", "--help"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("--config"));
    assert!(text.contains("--set"));
    assert!(text.contains("[default: test]"));
}

#[test]
fn set_overrides_reach_the_run() {
    let ws = Workspace::new();
    let msg = ws.run_ok(&["gen-data", "--set", "data.synthetic.n_dialogues=14"]);
    assert!(msg.contains("14 dialogues"), "{msg}");
}
