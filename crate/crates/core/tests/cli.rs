use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

use dstqa::cli::{self, DialoguePrediction};
use dstqa::corpus::{load_dialogues, DialogueState, SyntheticConfig};
use dstqa::trainer::load_checkpoint;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dstqa"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut stdin = Cursor::new(Vec::new());
    run_with_input(args, &mut stdin)
}

fn run_with_input(args: &[&str], stdin: &mut Cursor<Vec<u8>>) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("dstqa").chain(args.iter().copied());
    let code = cli::run(argv, stdin, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic corpus and a checkpoint trained for a couple of epochs.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(graph: &str) -> Self {
        let dir = TempDir::new().unwrap();
        let cfg = SyntheticConfig::two_domain(8).with_splits(3, 3);
        let cfg_path = dir.path().join("synth.json");
        std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
        let corpus = dir.path().join("corpus");
        let (code, _, err) = run(&["gen-synthetic", "--out", s(&corpus), "--config", s(&cfg_path), "--seed", "4"]);
        assert_eq!(code, 0, "{err}");
        let ckpt = dir.path().join("ckpt");
        let (code, _, err) = run(&[
            "train", "--input", s(&corpus), "--out", s(&ckpt), "--preset", "desk", "--epochs", "2",
            "--word-dim", "8", "--char-dim", "4", "--char-embedding-dim", "4", "--role-dim", "4",
            "--graph", graph,
        ]);
        assert_eq!(code, 0, "{err}");
        Self { dir }
    }

    fn corpus(&self) -> PathBuf {
        self.dir.path().join("corpus")
    }

    fn ckpt(&self) -> PathBuf {
        self.dir.path().join("ckpt")
    }
}

#[test]
fn binary_exit_codes() {
    let status = |args: &[&str]| bin().args(args).output().unwrap().status.code();
    assert_eq!(status(&[]), Some(2));
    assert_eq!(status(&["train", "--bogus"]), Some(2));
    assert_eq!(status(&["predict", "--checkpoint", "x"]), Some(2));
    assert_eq!(status(&["train", "--input", "x", "--out", "y", "--graph", "maybe"]), Some(2));
    assert_eq!(status(&["train", "--input", "x", "--out", "y", "--dropout", "1.5"]), Some(2));
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("missing");
    assert_eq!(
        status(&["preprocess", "--raw", s(&missing), "--ontology", s(&missing), "--out", s(tmp.path())]),
        Some(1)
    );
    assert_eq!(status(&["--help"]), Some(0));
}

#[test]
fn train_writes_checkpoint_log_and_config() {
    let fx = Fixture::new("on");
    for f in ["manifest.json", "params.bin", "vocab.json", "ontology.json", "train_log.jsonl", "config.toml"] {
        assert!(fx.ckpt().join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(fx.ckpt().join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let (_, manifest) = load_checkpoint(&fx.ckpt()).unwrap();
    assert_eq!(manifest.train_config.epochs, 2);
    assert_eq!(manifest.train_config.word_dim, 8);
}

#[test]
fn gold_states_as_predictions_score_one() {
    let fx = Fixture::new("on");
    let test = load_dialogues(&fx.corpus().join("test.json")).unwrap();
    let gold: Vec<DialoguePrediction> = test
        .iter()
        .map(|d| DialoguePrediction {
            dialogue_id: d.id.clone(),
            states: d.turns.iter().map(|t| t.state.clone()).collect(),
        })
        .collect();
    let pred_path = fx.dir.path().join("gold.json");
    std::fs::write(&pred_path, serde_json::to_string(&gold).unwrap()).unwrap();
    let ontology = fx.corpus().join("ontology.json");
    let (code, out, err) = run(&[
        "evaluate", "--predictions", s(&pred_path), "--ontology", s(&ontology), "--input", s(&fx.corpus()),
    ]);
    assert_eq!(code, 0, "{err}");
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["joint"], 1.0);
    assert_eq!(report["slot"], 1.0);

    let empty: Vec<DialoguePrediction> = test
        .iter()
        .map(|d| DialoguePrediction {
            dialogue_id: d.id.clone(),
            states: vec![DialogueState::new(); d.turns.len()],
        })
        .collect();
    std::fs::write(&pred_path, serde_json::to_string(&empty).unwrap()).unwrap();
    let (_, out, _) = run(&[
        "evaluate", "--predictions", s(&pred_path), "--ontology", s(&ontology), "--input", s(&fx.corpus()),
    ]);
    let report: Value = serde_json::from_str(&out).unwrap();
    assert!(report["joint"].as_f64().unwrap() < 1.0);
}

#[test]
fn evaluate_records_graph_off_and_domain() {
    let fx = Fixture::new("off");
    let out_path = fx.dir.path().join("report.json");
    let (code, _, err) = run(&[
        "evaluate", "--checkpoint", s(&fx.ckpt()), "--input", s(&fx.corpus()), "--domain", "hotel",
        "--out", s(&out_path),
    ]);
    assert_eq!(code, 0, "{err}");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(report["metadata"]["graph"], "off");
    assert_eq!(report["metadata"]["config"]["graph"], "off");
    assert_eq!(report["metadata"]["domain"], "hotel");
    assert!(report["per_domain"].as_object().unwrap().keys().all(|k| k == "hotel"));

    let (code, _, _) = run(&["evaluate", "--checkpoint", s(&fx.ckpt()), "--input", s(&fx.corpus()), "--domain", "taxi"]);
    assert_eq!(code, 1);
}

#[test]
fn interactive_matches_batch_prediction() {
    let fx = Fixture::new("on");
    let test = load_dialogues(&fx.corpus().join("test.json")).unwrap();
    let (code, out, err) = run(&["predict", "--checkpoint", s(&fx.ckpt()), "--input", s(&fx.corpus().join("test.json"))]);
    assert_eq!(code, 0, "{err}");
    let batch: Vec<DialoguePrediction> = serde_json::from_str(&out).unwrap();
    assert_eq!(batch.len(), test.len());

    let mut script = String::new();
    for d in &test {
        for t in &d.turns {
            script.push_str(&format!("{}\n{}\n", t.agent, t.user));
        }
        script.push_str(":reset\n");
    }
    script.push_str(":quit\n");
    let mut stdin = Cursor::new(script.into_bytes());
    let (code, out, err) = run_with_input(&["predict", "--checkpoint", s(&fx.ckpt()), "--interactive"], &mut stdin);
    assert_eq!(code, 0, "{err}");
    let states: Vec<DialogueState> = out
        .lines()
        .map(|l| l.trim_start_matches("agent> ").trim_start_matches("user> "))
        .filter(|l| l.starts_with('['))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let expected: Vec<DialogueState> = batch.into_iter().flat_map(|p| p.states).collect();
    assert_eq!(states, expected);
    assert_eq!(out.matches("(reset)").count(), test.len());
}

#[test]
fn predict_rejects_foreign_ontology() {
    let fx = Fixture::new("on");
    let other = fx.dir.path().join("other.json");
    let cfg = SyntheticConfig {
        domains: SyntheticConfig::two_domain(1).domains[..1].to_vec(),
        ..SyntheticConfig::two_domain(1)
    };
    std::fs::write(&other, cfg.ontology().unwrap().to_json()).unwrap();
    let (code, _, err) = run(&[
        "predict", "--checkpoint", s(&fx.ckpt()), "--ontology", s(&other), "--input",
        s(&fx.corpus().join("test.json")),
    ]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn expand_domain_reports_sample() {
    let fx = Fixture::new("on");
    let (code, out, err) = run(&[
        "expand-domain", "--input", s(&fx.corpus()), "--domain", "hotel", "--fraction", "0.5", "--mode", "finetune",
        "--preset", "desk", "--epochs", "1", "--word-dim", "8", "--char-dim", "4", "--char-embedding-dim", "4",
        "--role-dim", "4",
    ]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["mode"], "finetune");
    assert_eq!(v["target"], "hotel");
    assert!(!v["sampled_ids"].as_array().unwrap().is_empty());
    let (code, _, _) = run(&[
        "expand-domain", "--input", s(&fx.corpus()), "--domain", "hotel", "--fraction", "0", "--mode", "scratch",
    ]);
    assert_ne!(code, 0);
}
