use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use retroseq_cli::commands::{predictions_path, split_path, ModelKind};
use retroseq_core::data::{read_jsonl, write_jsonl, ProcessedRecord, Vocab};
use retroseq_core::eval::{Candidate, PredictionRecord};
use retroseq_neural::{greedy_decode, load_checkpoint};

const CONFIG: &str = r#"
beam_width = 5
eval_ns = [1, 3, 5]
[model]
embedding_dim = 8
hidden_dim = 8
attention_dim = 8
encoder_layers = 1
decoder_layers = 2
batch_size = 16
learning_rate = 0.003
max_decode_len = 40
[training]
max_steps = 6
eval_interval = 3
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_retroseq"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin()
        .current_dir(dir)
        .args(["--config", "run.toml", "--out", "run"])
        .args(args)
        .output()
        .unwrap();
    out
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn workspace(config: &str, count: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    let status = bin()
        .current_dir(dir.path())
        .args([
            "synth",
            "--count",
            &count.to_string(),
            "--seed",
            "3",
            "--output",
            "data.tsv",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    dir
}

fn full_pipeline(dir: &Path) {
    ok(dir, &["--dataset", "data.tsv", "preprocess"]);
    ok(dir, &["extract-rules"]);
    ok(dir, &["train"]);
    ok(dir, &["predict", "--model", "baseline"]);
    ok(dir, &["predict", "--model", "seq2seq"]);
    ok(dir, &["evaluate"]);
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn pipeline_composes_and_is_idempotent() {
    let a = workspace(CONFIG, 150);
    full_pipeline(a.path());
    let first = snapshot(&a.path().join("run"));
    for name in [
        "train.jsonl",
        "valid.jsonl",
        "test.jsonl",
        "vocab.json",
        "class_counts.csv",
        "preprocess_report.json",
        "rules.jsonl",
        "rule_stats.json",
        "training_log.csv",
        "model/manifest.json",
        "model/params.bin",
        "predictions_baseline.jsonl",
        "predictions_seq2seq.jsonl",
        "report/metrics.json",
        "report/top_n.csv",
        "report/per_class.csv",
        "report/rank_histogram.csv",
    ] {
        assert!(first.contains_key(Path::new(name)), "missing {name}");
    }
    // same stages again in place, then from scratch elsewhere
    full_pipeline(a.path());
    assert_eq!(snapshot(&a.path().join("run")), first);
    let b = workspace(CONFIG, 150);
    full_pipeline(b.path());
    assert_eq!(snapshot(&b.path().join("run")), first);

    let log = String::from_utf8(first[Path::new("training_log.csv")].clone()).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step,train_loss,valid_perplexity");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("3,") && lines[2].starts_with("6,"));

    let top = String::from_utf8(first[Path::new("report/top_n.csv")].clone()).unwrap();
    let rows: Vec<&str> = top.lines().collect();
    assert_eq!(rows[0], "model,top1,top3,top5");
    assert!(rows[1].starts_with("baseline,") && rows[2].starts_with("seq2seq,"));
    let hist = String::from_utf8(first[Path::new("report/rank_histogram.csv")].clone()).unwrap();
    assert_eq!(hist.lines().count(), 1 + 2 * 10);
    let classes = String::from_utf8(first[Path::new("class_counts.csv")].clone()).unwrap();
    assert_eq!(classes.lines().count(), 11);
}

#[test]
fn prediction_files_share_one_schema() {
    let d = workspace(CONFIG, 120);
    full_pipeline(d.path());
    let run = d.path().join("run");
    let test: Vec<ProcessedRecord> = read_jsonl(&split_path(&run, "test")).unwrap();
    for model in [ModelKind::Baseline, ModelKind::Seq2seq] {
        let preds: Vec<PredictionRecord> = read_jsonl(&predictions_path(&run, model)).unwrap();
        assert_eq!(preds.len(), test.len());
        for (p, r) in preds.iter().zip(&test) {
            assert_eq!((&p.id, &p.target, p.class), (&r.id, &r.product_smiles, r.class));
            let ranks: Vec<usize> = p.candidates.iter().map(|c| c.rank).collect();
            assert_eq!(ranks, (1..=p.candidates.len()).collect::<Vec<_>>());
            for c in &p.candidates {
                match model {
                    ModelKind::Baseline => assert!(c.rule.is_some() && c.count.is_some() && c.log_prob.is_none()),
                    ModelKind::Seq2seq => assert!(c.rule.is_none() && c.log_prob.is_some()),
                }
            }
        }
        // keys on every line belong to the shared record type
        let text = fs::read_to_string(predictions_path(&run, model)).unwrap();
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
            assert_eq!(keys, ["candidates", "class", "id", "target"]);
        }
    }
    let seq: Vec<PredictionRecord> = read_jsonl(&predictions_path(&run, ModelKind::Seq2seq)).unwrap();
    assert!(seq.iter().all(|p| p.candidates.len() == 5));
}

#[test]
fn width_one_prediction_is_greedy() {
    let cfg = CONFIG
        .replace("beam_width = 5", "beam_width = 1")
        .replace("[1, 3, 5]", "[1]");
    let d = workspace(&cfg, 120);
    ok(d.path(), &["--dataset", "data.tsv", "preprocess"]);
    ok(d.path(), &["train"]);
    ok(d.path(), &["predict", "--model", "seq2seq"]);
    let run = d.path().join("run");
    let vocab: Vocab = serde_json::from_str(&fs::read_to_string(run.join("vocab.json")).unwrap()).unwrap();
    let (params, _) = load_checkpoint(&run.join("model")).unwrap();
    let test: Vec<ProcessedRecord> = read_jsonl(&split_path(&run, "test")).unwrap();
    let preds: Vec<PredictionRecord> = read_jsonl(&predictions_path(&run, ModelKind::Seq2seq)).unwrap();
    for (p, r) in preds.iter().zip(&test) {
        let g = greedy_decode(&params, &r.src_tokens);
        assert_eq!(p.candidates.len(), 1);
        assert_eq!(p.candidates[0].reactants, vocab.detokenize(&g.tokens));
        assert!((p.candidates[0].log_prob.unwrap() - g.log_prob).abs() < 1e-9);
    }
}

#[test]
fn baseline_without_applicable_rules_is_empty() {
    let d = workspace(CONFIG, 120);
    ok(d.path(), &["--dataset", "data.tsv", "preprocess"]);
    ok(d.path(), &["extract-rules"]);
    // no rule of any class applies to a bare alkane
    let out = ok(
        d.path(),
        &["predict", "--model", "baseline", "--target", "CCCCCCCC", "--class", "1"],
    );
    let rec: PredictionRecord = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rec.target, "CCCCCCCC");
    assert_eq!(rec.class, 1);
    assert!(rec.candidates.is_empty());
}

#[test]
fn all_correct_predictions_score_perfectly() {
    let d = workspace(CONFIG, 80);
    ok(d.path(), &["--dataset", "data.tsv", "preprocess"]);
    let run = d.path().join("run");
    let test: Vec<ProcessedRecord> = read_jsonl(&split_path(&run, "test")).unwrap();
    let perfect: Vec<PredictionRecord> = test
        .iter()
        .map(|r| PredictionRecord {
            id: r.id.clone(),
            target: r.product_smiles.clone(),
            class: r.class,
            candidates: vec![Candidate {
                rank: 1,
                reactants: r.reactants_smiles.clone(),
                rule: None,
                count: None,
                log_prob: Some(0.0),
            }],
        })
        .collect();
    write_jsonl(&run.join("perfect.jsonl"), &perfect).unwrap();
    ok(d.path(), &["evaluate", "--predictions", "oracle=run/perfect.jsonl"]);
    let top = fs::read_to_string(run.join("report/top_n.csv")).unwrap();
    assert_eq!(top, "model,top1,top3,top5\noracle,100.0,100.0,100.0\n");
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("report/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics[0]["max_accuracy"], 1.0);
    assert_eq!(metrics[0]["rank_histogram"][0], test.len());
}

#[test]
fn invalid_model_config_exits_nonzero() {
    let d = workspace(&CONFIG.replace("[model]", "[model]\ndropout_keep = 0.0"), 40);
    let out = run(d.path(), &["--dataset", "data.tsv", "preprocess"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("invalid model config"), "{err}");
}

#[test]
fn beam_narrower_than_cutoffs_rejected() {
    let d = workspace(CONFIG, 40);
    let out = run(d.path(), &["--beam-width", "2", "--dataset", "data.tsv", "preprocess"]);
    assert!(!out.status.success());
}

#[test]
fn missing_dataset_exits_nonzero() {
    let d = workspace(CONFIG, 10);
    let out = run(d.path(), &["--dataset", "absent.tsv", "preprocess"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.tsv"));
}

#[test]
fn empty_dataset_gives_empty_splits() {
    let d = workspace(CONFIG, 10);
    fs::write(d.path().join("empty.tsv"), "id\tclass\treaction_smiles\n").unwrap();
    ok(d.path(), &["--dataset", "empty.tsv", "preprocess"]);
    let run = d.path().join("run");
    for s in ["train", "valid", "test"] {
        assert_eq!(fs::read_to_string(split_path(&run, s)).unwrap(), "");
    }
    let counts = fs::read_to_string(run.join("class_counts.csv")).unwrap();
    for line in counts.lines().skip(1) {
        assert!(line.ends_with(",0,0,0,0"), "{line}");
    }
    ok(d.path(), &["extract-rules"]);
    assert_eq!(fs::read_to_string(run.join("rules.jsonl")).unwrap(), "");
}
