//! Scoring of ranked predictions against ground-truth reactant sets: top-N and
//! per-class accuracy, maximum accuracy, rank histograms and error categories.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chem::{canonical_smiles, parse_smiles_with, ParseOptions};
use crate::data::{DataError, ProcessedRecord, NUM_CLASSES};
use crate::templates::{apply_template, RuleBase};

/// Default evaluation cut-offs.
pub const TOP_NS: [usize; 6] = [1, 3, 5, 10, 20, 50];

/// One ranked prediction. Baseline candidates carry the generating rule and
/// its count; model candidates carry a log probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub rank: usize,
    pub reactants: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_prob: Option<f64>,
}

/// Line of a prediction file, shared by both predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default)]
    pub id: String,
    pub target: String,
    pub class: u8,
    pub candidates: Vec<Candidate>,
}

/// Ground truth for one test example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub class: u8,
    pub target: String,
    pub reactants: String,
}

impl From<&ProcessedRecord> for Example {
    fn from(r: &ProcessedRecord) -> Self {
        Example {
            id: r.id.clone(),
            class: r.class,
            target: r.product_smiles.clone(),
            reactants: r.reactants_smiles.clone(),
        }
    }
}

/// Canonical form of a reactant-set string, `None` if it does not parse.
pub fn canonicalize_set(text: &str, opts: ParseOptions) -> Option<String> {
    parse_smiles_with(text, opts).ok().map(|m| canonical_smiles(&m))
}

/// Exact match of two reactant sets: canonical multiset equality, so
/// component order and SMILES spelling do not matter.
pub fn sets_match(predicted: &str, truth: &str, opts: ParseOptions) -> bool {
    match (canonicalize_set(predicted, opts), canonicalize_set(truth, opts)) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    }
}

/// Per-example evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: String,
    pub class: u8,
    /// Smallest 1-based rank whose candidate matches the ground truth.
    pub match_rank: Option<usize>,
    pub top_valid: bool,
    pub n_candidates: usize,
}

/// Scores every example; examples without a prediction record count as misses.
pub fn score(examples: &[Example], predictions: &[PredictionRecord], opts: ParseOptions) -> Vec<Scored> {
    let by_id: BTreeMap<&str, &PredictionRecord> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    examples
        .par_iter()
        .map(|ex| {
            let truth = canonicalize_set(&ex.reactants, opts);
            let cands: &[Candidate] = by_id.get(ex.id.as_str()).map_or(&[], |p| &p.candidates);
            let mut sorted: Vec<&Candidate> = cands.iter().collect();
            sorted.sort_by_key(|c| c.rank);
            let canon: Vec<Option<String>> = sorted.iter().map(|c| canonicalize_set(&c.reactants, opts)).collect();
            let match_rank = truth.as_ref().and_then(|t| {
                sorted
                    .iter()
                    .zip(&canon)
                    .find(|(_, c)| c.as_ref() == Some(t))
                    .map(|(cand, _)| cand.rank)
            });
            Scored {
                id: ex.id.clone(),
                class: ex.class,
                match_rank,
                top_valid: canon.first().is_some_and(Option::is_some),
                n_candidates: sorted.len(),
            }
        })
        .collect()
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Fraction of examples matched at rank ≤ N, for each N.
pub fn top_n_accuracy(scored: &[Scored], ns: &[usize]) -> BTreeMap<usize, f64> {
    ns.iter()
        .map(|&n| {
            let hits = scored.iter().filter(|s| s.match_rank.is_some_and(|r| r <= n)).count();
            (n, fraction(hits, scored.len()))
        })
        .collect()
}

/// Fraction matched at any rank.
pub fn max_accuracy(scored: &[Scored]) -> f64 {
    fraction(scored.iter().filter(|s| s.match_rank.is_some()).count(), scored.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub count: usize,
    pub hits: usize,
    pub accuracy: f64,
}

/// Top-N accuracy per class; only classes present in the input appear.
pub fn per_class_accuracy(scored: &[Scored], n: usize) -> BTreeMap<u8, ClassRow> {
    let mut rows: BTreeMap<u8, ClassRow> = BTreeMap::new();
    for s in scored {
        let row = rows.entry(s.class).or_insert(ClassRow {
            count: 0,
            hits: 0,
            accuracy: 0.0,
        });
        row.count += 1;
        if s.match_rank.is_some_and(|r| r <= n) {
            row.hits += 1;
        }
    }
    for row in rows.values_mut() {
        row.accuracy = fraction(row.hits, row.count);
    }
    rows
}

/// `hist[k]` counts examples whose best matching rank is `k + 1`, for ranks
/// up to `max_n`.
pub fn rank_histogram(scored: &[Scored], max_n: usize) -> Vec<usize> {
    let mut hist = vec![0; max_n];
    for s in scored {
        if let Some(r) = s.match_rank.filter(|&r| r >= 1 && r <= max_n) {
            hist[r - 1] += 1;
        }
    }
    hist
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Correct,
    Invalid,
    /// Automatic stand-in for "chemically plausible": some rule of the
    /// example's class regenerates the predicted set from the target.
    PlausibleProxy,
    ImplausibleProxy,
}

/// Category of the top-ranked prediction. An empty prediction list counts as
/// implausible.
pub fn classify_error(
    example: &Example,
    prediction: Option<&PredictionRecord>,
    rb: &RuleBase,
    opts: ParseOptions,
) -> ErrorCategory {
    let top = prediction.and_then(|p| p.candidates.iter().min_by_key(|c| c.rank));
    let Some(top) = top else {
        return ErrorCategory::ImplausibleProxy;
    };
    let Some(predicted) = canonicalize_set(&top.reactants, opts) else {
        return ErrorCategory::Invalid;
    };
    if canonicalize_set(&example.reactants, opts).as_ref() == Some(&predicted) {
        return ErrorCategory::Correct;
    }
    let Ok(target) = parse_smiles_with(&example.target, opts) else {
        return ErrorCategory::ImplausibleProxy;
    };
    let supported = rb
        .rules_for_class(example.class)
        .any(|r| apply_template(&r.template, &target).contains(&predicted));
    if supported {
        ErrorCategory::PlausibleProxy
    } else {
        ErrorCategory::ImplausibleProxy
    }
}

/// Counts per category (all four keys present).
pub fn error_breakdown(
    examples: &[Example],
    predictions: &[PredictionRecord],
    rb: &RuleBase,
    opts: ParseOptions,
) -> BTreeMap<ErrorCategory, usize> {
    let by_id: BTreeMap<&str, &PredictionRecord> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let cats: Vec<ErrorCategory> = examples
        .par_iter()
        .map(|ex| classify_error(ex, by_id.get(ex.id.as_str()).copied(), rb, opts))
        .collect();
    let mut out: BTreeMap<ErrorCategory, usize> = [
        ErrorCategory::Correct,
        ErrorCategory::Invalid,
        ErrorCategory::PlausibleProxy,
        ErrorCategory::ImplausibleProxy,
    ]
    .into_iter()
    .map(|c| (c, 0))
    .collect();
    for c in cats {
        *out.entry(c).or_insert(0) += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub examples: usize,
    pub top_n: BTreeMap<usize, f64>,
    pub max_accuracy: f64,
    pub per_class_top10: BTreeMap<u8, ClassRow>,
    pub rank_histogram: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_categories: Option<BTreeMap<ErrorCategory, usize>>,
}

impl MetricsReport {
    pub fn from_scored(model: &str, scored: &[Scored], ns: &[usize]) -> Self {
        MetricsReport {
            model: model.to_string(),
            examples: scored.len(),
            top_n: top_n_accuracy(scored, ns),
            max_accuracy: max_accuracy(scored),
            per_class_top10: per_class_accuracy(scored, 10),
            rank_histogram: rank_histogram(scored, 10),
            error_categories: None,
        }
    }
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).expect("writing to memory");
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 csv")
}

/// Rows: one per model; columns: top-N accuracy in percent.
pub fn top_n_table_csv(reports: &[MetricsReport], ns: &[usize]) -> String {
    csv_string(|w| {
        let mut header = vec!["model".to_string()];
        header.extend(ns.iter().map(|n| format!("top{n}")));
        w.write_record(&header)?;
        for r in reports {
            let mut row = vec![r.model.clone()];
            row.extend(
                ns.iter()
                    .map(|n| format!("{:.1}", 100.0 * r.top_n.get(n).copied().unwrap_or(0.0))),
            );
            w.write_record(&row)?;
        }
        Ok(())
    })
}

/// Rows: classes 1..=10; columns: example count, then top-10 percent per model.
pub fn per_class_table_csv(reports: &[MetricsReport]) -> String {
    csv_string(|w| {
        let mut header = vec!["class".to_string(), "examples".to_string()];
        header.extend(reports.iter().map(|r| r.model.clone()));
        w.write_record(&header)?;
        for c in 1..=NUM_CLASSES {
            let count = reports
                .iter()
                .find_map(|r| r.per_class_top10.get(&c).map(|row| row.count))
                .unwrap_or(0);
            let mut row = vec![c.to_string(), count.to_string()];
            row.extend(reports.iter().map(|r| {
                let acc = r.per_class_top10.get(&c).map_or(0.0, |row| row.accuracy);
                format!("{:.1}", 100.0 * acc)
            }));
            w.write_record(&row)?;
        }
        Ok(())
    })
}

/// `rank,count,model` rows, ten per model.
pub fn histogram_csv(reports: &[MetricsReport]) -> String {
    csv_string(|w| {
        w.write_record(["rank", "count", "model"])?;
        for r in reports {
            for (k, c) in r.rank_histogram.iter().enumerate() {
                w.write_record([(k + 1).to_string(), c.to_string(), r.model.clone()])?;
            }
        }
        Ok(())
    })
}

/// Writes `metrics.json`, `top_n.csv`, `per_class.csv` and `rank_histogram.csv`.
pub fn write_reports(dir: &Path, reports: &[MetricsReport], ns: &[usize]) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let put = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| DataError::io(&p, e))
    };
    put("metrics.json", serde_json::to_string_pretty(reports)? + "\n")?;
    put("top_n.csv", top_n_table_csv(reports, ns))?;
    put("per_class.csv", per_class_table_csv(reports))?;
    put("rank_histogram.csv", histogram_csv(reports))
}
