use std::collections::BTreeMap;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use retroseq_core::chem::{canonical_smiles, parse_smiles_with};
use retroseq_core::data::{
    build_vocab, class_counts, filter_trivial, load_reactions, read_jsonl, split_dataset, split_multiproduct,
    tokenize_records, tokenize_source, write_jsonl, ProcessedRecord, TrivialReason, Vocab, NUM_CLASSES,
};
use retroseq_core::eval::{error_breakdown, score, write_reports, Candidate, Example, MetricsReport, PredictionRecord};
use retroseq_core::expert::predict_baseline;
use retroseq_core::synth::{self, SynthConfig, DATASET_CLASS_WEIGHTS};
use retroseq_core::templates::{build_rulebase, RuleBase, RuleStats};
use retroseq_neural::{
    beam_decode, expect_vocab, fit, init_model, load_checkpoint, save_checkpoint, Pair, Seq2SeqParams,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const CLASS_NAMES: [&str; 10] = [
    "Heteroatom alkylation and arylation",
    "Acylation and related processes",
    "C-C bond formation",
    "Heterocycle formation",
    "Protections",
    "Deprotections",
    "Reductions",
    "Oxidations",
    "Functional group interconversion (FGI)",
    "Functional group addition (FGA)",
];

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelKind {
    Seq2seq,
    Baseline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Seq2seq => "seq2seq",
            ModelKind::Baseline => "baseline",
        }
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn split_path(out: &Path, split: &str) -> PathBuf {
    out.join(format!("{split}.jsonl"))
}

pub fn predictions_path(out: &Path, model: ModelKind) -> PathBuf {
    out.join(format!("predictions_{}.jsonl", model.name()))
}

fn read_records(path: &Path) -> Result<Vec<ProcessedRecord>> {
    read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub loaded: usize,
    pub unparsed_lines: usize,
    pub after_product_split: usize,
    pub trivial_removed: BTreeMap<TrivialReason, usize>,
    pub kept: usize,
    pub split_sizes: BTreeMap<String, usize>,
    pub over_length_dropped: BTreeMap<String, usize>,
    pub vocab_size: usize,
}

pub fn class_table_csv(all: &BTreeMap<u8, usize>, per_split: &[BTreeMap<u8, usize>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["class".to_string(), "name".into(), "examples".into()];
    header.extend(SPLITS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for c in 1..=NUM_CLASSES {
        let mut row = vec![
            c.to_string(),
            CLASS_NAMES[c as usize - 1].to_string(),
            all[&c].to_string(),
        ];
        row.extend(per_split.iter().map(|m| m[&c].to_string()));
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Dataset → `{train,valid,test}.jsonl`, `vocab.json`, `class_counts.csv` and
/// `preprocess_report.json`.
pub fn preprocess(cfg: &RunConfig) -> Result<PreprocessReport> {
    let path = cfg.dataset()?;
    let loaded = load_reactions(path, cfg.parse_options())?;
    let singles: Vec<_> = loaded.records.iter().flat_map(split_multiproduct).collect();
    let after_split = singles.len();
    let (kept, trivial) = filter_trivial(singles, &cfg.trivial);
    info!("{} reactions after splitting, {} kept", after_split, kept.len());
    let splits = split_dataset(&kept, &cfg.split, |r| r.klass)?;
    let vocab = build_vocab(&splits.train);
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut sizes = BTreeMap::new();
    let mut dropped = BTreeMap::new();
    let mut per_split = Vec::new();
    for (name, records) in SPLITS.iter().zip([&splits.train, &splits.valid, &splits.test]) {
        let (processed, n_dropped) = tokenize_records(records, &vocab);
        write_jsonl(&split_path(&cfg.out, name), &processed)?;
        sizes.insert(name.to_string(), processed.len());
        dropped.insert(name.to_string(), n_dropped);
        per_split.push(class_counts(processed.iter().map(|r| r.class)));
    }
    write_json(&cfg.out.join("vocab.json"), &vocab)?;
    let all = class_counts(kept.iter().map(|r| r.klass));
    write(&cfg.out.join("class_counts.csv"), class_table_csv(&all, &per_split)?)?;
    let report = PreprocessReport {
        loaded: loaded.records.len(),
        unparsed_lines: loaded.errors.len(),
        after_product_split: after_split,
        trivial_removed: trivial,
        kept: kept.len(),
        split_sizes: sizes,
        over_length_dropped: dropped,
        vocab_size: vocab.len(),
    };
    write_json(&cfg.out.join("preprocess_report.json"), &report)?;
    Ok(report)
}

/// Training split → `rules.jsonl` and `rule_stats.json`.
pub fn extract_rules(cfg: &RunConfig) -> Result<RuleStats> {
    let records = read_records(&split_path(&cfg.out, "train"))?;
    let mut reactions = Vec::with_capacity(records.len());
    for r in &records {
        match r.to_reaction() {
            Ok(x) => reactions.push(x),
            Err(e) => warn!("{}: {e}; skipped", r.id),
        }
    }
    let (rb, stats) = build_rulebase(&reactions);
    info!(
        "{} valid rules, {} unique, coverage {:.1}%",
        stats.valid,
        stats.unique,
        100.0 * stats.coverage
    );
    rb.save(&cfg.out.join("rules.jsonl"))?;
    write_json(&cfg.out.join("rule_stats.json"), &stats)?;
    Ok(stats)
}

fn pairs(records: &[ProcessedRecord]) -> Vec<Pair> {
    records
        .iter()
        .map(|r| (r.src_tokens.clone(), r.tgt_tokens.clone()))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub best_step: u64,
    pub best_perplexity: Option<f64>,
    pub stopped_early: bool,
}

/// Splits + vocabulary → checkpoint in `model/` (parameters of the best
/// validation evaluation) and `training_log.csv`.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    let vocab: Vocab = read_json(&cfg.out.join("vocab.json"))?;
    let train = pairs(&read_records(&split_path(&cfg.out, "train"))?);
    let valid = pairs(&read_records(&split_path(&cfg.out, "valid"))?);
    if train.is_empty() {
        bail!("training split is empty");
    }
    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = vocab.len();
    let (params, mut opt) = init_model(&model_cfg)?;
    info!("training {} weights on {} pairs", params.n_weights(), train.len());
    let result = fit(params, &mut opt, &train, &valid, &cfg.training, |s, _| {
        if s.step % 100 == 0 {
            info!("step {}: loss {:.4}", s.step, s.loss);
        }
        ControlFlow::Continue(())
    })?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "train_loss", "valid_perplexity"])?;
    for e in &result.evaluations {
        w.write_record([
            e.step.to_string(),
            format!("{:.6}", e.train_loss),
            format!("{:.6}", e.valid_perplexity),
        ])?;
    }
    write(&cfg.out.join("training_log.csv"), w.into_inner()?)?;
    save_checkpoint(&cfg.out.join("model"), &result.best, &opt)?;
    let summary = TrainSummary {
        steps: result.steps,
        best_step: result.best_step,
        best_perplexity: result.best_perplexity,
        stopped_early: result.stopped_early,
    };
    write_json(&cfg.out.join("training_summary.json"), &summary)?;
    Ok(summary)
}

/// Targets to predict: `(id, canonical product SMILES, class)`.
pub type Target = (String, String, u8);

pub fn targets_from_records(records: &[ProcessedRecord], class: Option<u8>) -> Vec<Target> {
    records
        .iter()
        .filter(|r| class.is_none_or(|c| c == r.class))
        .map(|r| (r.id.clone(), r.product_smiles.clone(), r.class))
        .collect()
}

fn seq2seq_candidates(params: &Seq2SeqParams<f32>, vocab: &Vocab, target: &Target, width: usize) -> Vec<Candidate> {
    let Ok(src) = tokenize_source(&target.1, target.2, vocab) else {
        warn!("{}: target too long for the model", target.0);
        return Vec::new();
    };
    beam_decode(params, &src, width)
        .into_iter()
        .enumerate()
        .map(|(k, h)| Candidate {
            rank: k + 1,
            reactants: vocab.detokenize(&h.tokens),
            rule: None,
            count: None,
            log_prob: Some(h.log_prob),
        })
        .collect()
}

pub fn predict(cfg: &RunConfig, model: ModelKind, targets: &[Target]) -> Result<Vec<PredictionRecord>> {
    let opts = cfg.parse_options();
    let one = |t: &Target, cands: Vec<Candidate>| PredictionRecord {
        id: t.0.clone(),
        target: t.1.clone(),
        class: t.2,
        candidates: cands,
    };
    let out = match model {
        ModelKind::Baseline => {
            let rb = RuleBase::load(&cfg.out.join("rules.jsonl"))?;
            let cap = cfg.baseline_candidates.unwrap_or(usize::MAX);
            targets
                .par_iter()
                .map(|t| {
                    let cands = match parse_smiles_with(&t.1, opts) {
                        Ok(m) => predict_baseline(&rb, &m, t.2, cap),
                        Err(e) => {
                            warn!("{}: {e}", t.0);
                            Vec::new()
                        }
                    };
                    one(t, cands)
                })
                .collect()
        }
        ModelKind::Seq2seq => {
            let vocab: Vocab = read_json(&cfg.out.join("vocab.json"))?;
            let (params, _) = load_checkpoint(&cfg.out.join("model"))?;
            expect_vocab(&params, vocab.len())?;
            targets
                .par_iter()
                .map(|t| one(t, seq2seq_candidates(&params, &vocab, t, cfg.beam_width)))
                .collect()
        }
    };
    Ok(out)
}

/// Canonicalizes a user-supplied target.
pub fn single_target(smiles: &str, class: u8, cfg: &RunConfig) -> Result<Target> {
    if !(1..=NUM_CLASSES).contains(&class) {
        bail!("class {class} outside 1..=10");
    }
    let mol = parse_smiles_with(smiles, cfg.parse_options()).with_context(|| format!("parsing {smiles:?}"))?;
    Ok(("target".into(), canonical_smiles(&mol), class))
}

pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    write_jsonl(path, preds)?;
    Ok(())
}

/// Scores prediction files against `examples`; writes the report tables into
/// `dir`. Error categories need `rules.jsonl` in the output directory.
pub fn evaluate(
    cfg: &RunConfig,
    examples: &[Example],
    predictions: &[(String, PathBuf)],
    dir: &Path,
) -> Result<Vec<MetricsReport>> {
    let opts = cfg.parse_options();
    let rules_path = cfg.out.join("rules.jsonl");
    let rb = if rules_path.exists() {
        Some(RuleBase::load(&rules_path)?)
    } else {
        None
    };
    let mut reports = Vec::new();
    for (model, path) in predictions {
        let preds: Vec<PredictionRecord> = read_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
        let scored = score(examples, &preds, opts);
        let mut report = MetricsReport::from_scored(model, &scored, &cfg.eval_ns);
        if let Some(rb) = &rb {
            report.error_categories = Some(error_breakdown(examples, &preds, rb, opts));
        }
        info!(
            "{model}: top-1 {:.1}%, max {:.1}%",
            100.0 * report.top_n.values().next().copied().unwrap_or(0.0),
            100.0 * report.max_accuracy
        );
        reports.push(report);
    }
    write_reports(dir, &reports, &cfg.eval_ns)?;
    Ok(reports)
}

pub fn synthesize(count: usize, seed: u64) -> String {
    let cfg = SynthConfig {
        count,
        seed,
        class_weights: DATASET_CLASS_WEIGHTS,
        ..SynthConfig::default()
    };
    synth::to_tsv(&synth::generate(&cfg))
}
