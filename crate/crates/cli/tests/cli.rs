use mucap_core::data::Corpus;
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "model": {"n_feat": 4, "conv": [{"channels": 8, "width": 2, "stride": 2}],
            "d_music": 8, "d_text": 8, "d_latent": 8, "d_attn": 8, "d_ff": 16,
            "heads": 2, "cross_heads": 2, "music_layers": 1, "text_layers": 1,
            "decoder_layers": 1, "max_len": 24, "max_frames": 16},
  "train": {"lr": 0.003, "epochs": 2, "batch_size": 8, "eval_generate": 4, "max_gen_len": 16},
  "data": {"topics": 3, "generation": {"n": 40, "frames": 8}, "train": 24, "eval": 8, "test": 8},
  "seeds": [0],
  "attention_samples": 4,
  "ks": [1, 5]
}"#;

fn mucap(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mucap"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn run(&self, args: &[&str]) -> Output {
        mucap(args, self.path())
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn corpus(&self, name: &str, seed: &str) {
        self.ok(&[
            "gen-data",
            "--config",
            "tiny.json",
            "--out",
            name,
            "--n",
            "40",
            "--seed",
            seed,
        ]);
    }
}

#[test]
fn gen_data_is_deterministic() {
    let ws = Workspace::new();
    ws.ok(&[
        "gen-data", "--out", "a.jsonl", "--n", "30", "--seed", "5", "--rho", "0.5", "--topics", "4",
    ]);
    ws.ok(&[
        "gen-data", "--out", "b.jsonl", "--n", "30", "--seed", "5", "--rho", "0.5", "--topics", "4",
    ]);
    let a = std::fs::read(ws.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(ws.path().join("b.jsonl")).unwrap());
    ws.ok(&[
        "gen-data", "--out", "c.jsonl", "--n", "30", "--seed", "6", "--rho", "0.5", "--topics", "4",
    ]);
    assert_ne!(a, std::fs::read(ws.path().join("c.jsonl")).unwrap());

    let corpus = Corpus::load(&ws.path().join("a.jsonl")).unwrap();
    assert_eq!(corpus.len(), 30);
    let meta = corpus.meta.unwrap();
    assert_eq!(meta.generation.unwrap().rho, 0.5);
    assert_eq!(meta.topics.unwrap().topics.len(), 4);
}

#[test]
fn eval_caption_identity_gives_unit_f1() {
    let ws = Workspace::new();
    ws.corpus("c.jsonl", "1");
    let corpus = Corpus::load(&ws.path().join("c.jsonl")).unwrap();
    let lines: Vec<String> = corpus
        .instances
        .iter()
        .map(|s| serde_json::to_string(&s.caption).unwrap())
        .collect();
    std::fs::write(ws.path().join("pred.jsonl"), lines.join("\n")).unwrap();
    ws.ok(&[
        "eval-caption",
        "--predictions",
        "pred.jsonl",
        "--corpus",
        "c.jsonl",
        "--out",
        "m.json",
    ]);
    let m = read_json(ws.path().join("m.json"));
    let report = &m["report"];
    for key in ["rouge1", "rouge2", "rouge_l"] {
        assert_eq!(report[key]["f1"].as_f64(), Some(1.0), "{key}");
    }
    assert_eq!(report["n"].as_u64(), Some(40));
    assert_eq!(m["config"]["predictions"].as_str(), Some("pred.jsonl"));
    assert_eq!(m["samples"][0]["generated"], m["samples"][0]["reference"]);

    // a count mismatch is a runtime error
    std::fs::write(ws.path().join("short.jsonl"), &lines[0]).unwrap();
    let out = ws.run(&["eval-caption", "--predictions", "short.jsonl", "--corpus", "c.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "parse");
}

#[test]
fn grad_check_passes_at_default_dims() {
    let ws = Workspace::new();
    ws.ok(&["grad-check", "--out", "g.json"]);
    let g = read_json(ws.path().join("g.json"));
    assert_eq!(g["result"], "pass");
    let worst = g["report"]["max_rel_error"].as_f64().unwrap();
    assert!(worst < 1e-4, "{worst}");
    assert!(g["report"]["entries"].as_array().unwrap().len() > 30);
}

#[test]
fn failing_grad_check_exits_one() {
    let ws = Workspace::new();
    let out = ws.run(&["grad-check", "--dims", "2", "--tol", "1e-30"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "check_failed");
}

#[test]
fn usage_errors_exit_two() {
    let ws = Workspace::new();
    for args in [
        vec!["train", "--bogus"],
        vec!["gen-data"],
        vec!["gen-data", "--out", "x.jsonl", "--n", "many"],
        vec!["eval-caption", "--corpus", "c.jsonl"],
        vec!["no-such-command"],
    ] {
        assert_eq!(ws.run(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_one_with_json() {
    let ws = Workspace::new();
    let out = ws.run(&[
        "export-attention",
        "--checkpoint",
        "missing.ckpt",
        "--corpus",
        "c.jsonl",
        "--out",
        "a.csv",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "io");
    assert!(err["error"]["message"].as_str().unwrap().contains("missing.ckpt"));

    std::fs::write(
        ws.path().join("bad.json"),
        r#"{"train": {"lr": 0.1, "learning_rate": 2}}"#,
    )
    .unwrap();
    let out = ws.run(&["sweep-alpha", "--config", "bad.json", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "config");

    let out = ws.run(&["gen-data", "--out", "x.jsonl", "--set", "data.nope=1"]);
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(ws.path().join("junk.jsonl"), "{not json}\n").unwrap();
    let out = ws.run(&[
        "train",
        "--train",
        "junk.jsonl",
        "--eval",
        "junk.jsonl",
        "--out-dir",
        "r",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "parse");
}

#[test]
fn train_then_evaluate_and_export() {
    let ws = Workspace::new();
    ws.corpus("train.jsonl", "1");
    ws.corpus("eval.jsonl", "2");
    let train = [
        "train",
        "--config",
        "tiny.json",
        "--train",
        "train.jsonl",
        "--eval",
        "eval.jsonl",
        "--epochs",
        "3",
        "--alpha",
        "0.1",
        "--out-dir",
    ];
    ws.ok(&[&train[..], &["run"]].concat());
    let run = ws.path().join("run");
    for f in [
        "best.ckpt",
        "epoch-000.ckpt",
        "epoch-002.ckpt",
        "config.json",
        "summary.json",
        "runlog.jsonl",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert!(!run.join("epoch-003.ckpt").exists());
    let cfg = read_json(run.join("config.json"));
    assert_eq!(cfg["config"]["train"]["epochs"].as_u64(), Some(3));
    assert_eq!(cfg["config"]["train"]["alpha"].as_f64(), Some(0.1));
    assert_eq!(cfg["config"]["train"]["lr"].as_f64(), Some(0.003));

    // same flags, same log
    ws.ok(&[&train[..], &["run2"]].concat());
    let log = std::fs::read(run.join("runlog.jsonl")).unwrap();
    assert_eq!(log, std::fs::read(ws.path().join("run2/runlog.jsonl")).unwrap());

    ws.ok(&[
        "eval-caption",
        "--checkpoint",
        "run/best.ckpt",
        "--corpus",
        "eval.jsonl",
        "--out",
        "cap.json",
    ]);
    let cap = read_json(ws.path().join("cap.json"));
    let f1 = cap["report"]["rouge_l"]["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    assert_eq!(cap["config"]["max_gen_len"].as_u64(), Some(16));

    ws.ok(&[
        "eval-retrieval",
        "--checkpoint",
        "run/best.ckpt",
        "--corpus",
        "eval.jsonl",
        "--k",
        "1,5,10",
        "--out",
        "ret.json",
        "--per-query",
        "ret.csv",
    ]);
    let ret = read_json(ws.path().join("ret.json"));
    let at_k = ret["result"]["at_k"].as_array().unwrap();
    assert_eq!(at_k.len(), 3);
    assert_eq!(at_k[2]["k"].as_u64(), Some(10));
    let csv = std::fs::read_to_string(ws.path().join("ret.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config: "));
    assert!(lines.next().unwrap().starts_with("query,relevant,rank,top1"));
    assert_eq!(lines.count(), 40);

    ws.ok(&[
        "eval-retrieval",
        "--checkpoint",
        "run/best.ckpt",
        "--corpus",
        "eval.jsonl",
        "--mode",
        "latent",
    ]);
    // k beyond the corpus size is rejected
    let out = ws.run(&[
        "eval-retrieval",
        "--checkpoint",
        "run/best.ckpt",
        "--corpus",
        "eval.jsonl",
        "--k",
        "41",
    ]);
    assert_eq!(out.status.code(), Some(1));

    ws.ok(&[
        "export-attention",
        "--checkpoint",
        "run/best.ckpt",
        "--corpus",
        "eval.jsonl",
        "--index",
        "3",
        "--out",
        "att.csv",
    ]);
    let att = std::fs::read_to_string(ws.path().join("att.csv")).unwrap();
    let mut lines = att.lines();
    assert!(lines.next().unwrap().contains("\"index\":3"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[0], "token");
    assert_eq!(header[1], "frames 0-1");
    let corpus = Corpus::load(&ws.path().join("eval.jsonl")).unwrap();
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), corpus.instances[3].lyrics.len());
    assert!(rows[0].starts_with("0:<bos>,"));
    for row in rows {
        let sum: f64 = row.split(',').skip(1).map(|x| x.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
    let out = ws.run(&[
        "export-attention",
        "--checkpoint",
        "run/best.ckpt",
        "--corpus",
        "eval.jsonl",
        "--index",
        "40",
        "--out",
        "x.csv",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_and_verify_ib_write_reports() {
    let ws = Workspace::new();
    ws.ok(&[
        "sweep-alpha",
        "--config",
        "tiny.json",
        "--alphas",
        "0,0.5",
        "--seeds",
        "0,1",
        "--jobs",
        "2",
        "--out",
        "s.csv",
    ]);
    let csv = std::fs::read_to_string(ws.path().join("s.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config: "));
    assert!(lines[0].contains("\"alphas\":[0.0,0.5]"));
    assert!(lines[1].starts_with("alpha,seed,rouge1"));
    assert_eq!(lines.len(), 6);

    let out = ws.run(&[
        "verify-ib",
        "--config",
        "tiny.json",
        "--set",
        "data.generation.n=60",
        "--out",
        "ib.json",
    ]);
    let report = read_json(ws.path().join("ib.json"));
    assert_eq!(report["config"]["data"]["generation"]["n"].as_u64(), Some(60));
    match report["passed"].as_bool().unwrap() {
        true => assert!(out.status.success()),
        false => {
            assert_eq!(out.status.code(), Some(1));
            assert_eq!(error_json(&out)["error"]["kind"], "check_failed");
        }
    }
}
