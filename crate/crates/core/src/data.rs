//! Reaction dataset ingestion, preprocessing, splitting and character-level
//! tokenization.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{canonical_smiles, parse_smiles_with, write_smiles_in_order, Element, MolGraph, ParseOptions};

/// Longest token sequence the model accepts, class token and EOS included.
pub const MAX_SEQ_LEN: usize = 140;
pub const NUM_CLASSES: u8 = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("sequence of {len} tokens exceeds the limit of {limit}")]
    TooLong { len: usize, limit: usize },
    #[error("reaction class {0} outside 1..=10")]
    BadClass(u8),
    #[error("invalid split ratios")]
    BadSplit,
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// One labelled reaction. After preprocessing `product` is a single component.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionRecord {
    pub id: String,
    pub klass: u8,
    pub reactants: Vec<MolGraph>,
    pub product: MolGraph,
    pub raw_text: String,
}

impl ReactionRecord {
    /// Mapped reaction SMILES `reactants>>product`, atom maps kept.
    pub fn mapped_text(&self) -> String {
        let r: Vec<String> = self.reactants.iter().map(write_smiles_in_order).collect();
        format!("{}>>{}", r.join("."), write_smiles_in_order(&self.product))
    }

    /// Canonical, map-free product SMILES.
    pub fn product_smiles(&self) -> String {
        canonical_smiles(&self.product)
    }

    /// Canonical map-free reactant SMILES, components in lexicographic order.
    pub fn reactants_smiles(&self) -> String {
        join_canonical(&self.reactants)
    }
}

/// Canonical SMILES of each molecule, sorted and joined with `.`.
pub fn join_canonical(mols: &[MolGraph]) -> String {
    let mut parts: Vec<String> = mols
        .iter()
        .flat_map(|m| canonical_smiles(m).split('.').map(str::to_string).collect::<Vec<_>>())
        .collect();
    parts.sort();
    parts.join(".")
}

/// Parses one `reactants>reagents>products` string; the reagent field is dropped.
pub fn parse_reaction(id: &str, klass: u8, text: &str, opts: ParseOptions) -> Result<ReactionRecord, String> {
    if !(1..=NUM_CLASSES).contains(&klass) {
        return Err(format!("class {klass} outside 1..=10"));
    }
    let fields: Vec<&str> = text.split('>').collect();
    if fields.len() != 3 {
        return Err(format!("expected reactants>reagents>products, got {text:?}"));
    }
    let reactants = parse_smiles_with(fields[0], opts).map_err(|e| format!("reactants: {e}"))?;
    let product = parse_smiles_with(fields[2], opts).map_err(|e| format!("products: {e}"))?;
    Ok(ReactionRecord {
        id: id.to_string(),
        klass,
        reactants: reactants.split_components(),
        product,
        raw_text: text.to_string(),
    })
}

/// Outcome of [`load_reactions`].
#[derive(Debug, Default)]
pub struct LoadReport {
    pub records: Vec<ReactionRecord>,
    /// `(line number, message)` of every skipped line.
    pub errors: Vec<(usize, String)>,
}

/// Reads the tab-separated dataset: `id <TAB> class <TAB> reaction_smiles`.
/// A header line starting with `id` is skipped, as are blank lines.
pub fn load_reactions(path: &Path, opts: ParseOptions) -> Result<LoadReport, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    Ok(load_reactions_from_str(&text, opts))
}

pub fn load_reactions_from_str(text: &str, opts: ParseOptions) -> LoadReport {
    let mut report = LoadReport::default();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || (k == 0 && line.starts_with("id\t")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let parsed = if cols.len() != 3 {
            Err(format!("expected 3 tab-separated columns, found {}", cols.len()))
        } else {
            cols[1]
                .trim()
                .parse::<u8>()
                .map_err(|_| format!("bad class {:?}", cols[1]))
                .and_then(|klass| parse_reaction(cols[0].trim(), klass, cols[2].trim(), opts))
        };
        match parsed {
            Ok(r) => report.records.push(r),
            Err(message) => {
                warn!("line {line_no}: {message}; skipped");
                report.errors.push((line_no, message));
            }
        }
    }
    info!(
        "loaded {} reactions, skipped {} lines",
        report.records.len(),
        report.errors.len()
    );
    report
}

/// One record per product component, each with all original reactants. Ids of
/// split records get a `_p<k>` suffix (1-based).
pub fn split_multiproduct(r: &ReactionRecord) -> Vec<ReactionRecord> {
    let products = r.product.split_components();
    if products.len() <= 1 {
        return vec![r.clone()];
    }
    products
        .into_iter()
        .enumerate()
        .map(|(k, product)| ReactionRecord {
            id: format!("{}_p{}", r.id, k + 1),
            klass: r.klass,
            reactants: r.reactants.clone(),
            product,
            raw_text: r.raw_text.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrivialReason {
    NoCarbon,
    TooSmall,
    Listed,
}

/// Which products count as trivial. Products without carbon or with at most
/// `max_heavy_atoms` heavy atoms are dropped; the canonical-SMILES lists
/// override the rule in either direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrivialFilter {
    pub max_heavy_atoms: usize,
    pub always_remove: BTreeSet<String>,
    pub always_keep: BTreeSet<String>,
}

impl Default for TrivialFilter {
    fn default() -> Self {
        TrivialFilter {
            max_heavy_atoms: 3,
            always_remove: BTreeSet::new(),
            always_keep: BTreeSet::new(),
        }
    }
}

impl TrivialFilter {
    pub fn classify(&self, product: &MolGraph) -> Option<TrivialReason> {
        let smiles = canonical_smiles(product);
        if self.always_keep.contains(&smiles) {
            return None;
        }
        if self.always_remove.contains(&smiles) {
            return Some(TrivialReason::Listed);
        }
        if !product.atoms().iter().any(|a| a.element == Element::C) {
            return Some(TrivialReason::NoCarbon);
        }
        if product.heavy_atom_count() <= self.max_heavy_atoms {
            return Some(TrivialReason::TooSmall);
        }
        None
    }
}

/// Drops records with trivial products; returns the kept records and the
/// removal count per reason.
pub fn filter_trivial(
    records: Vec<ReactionRecord>,
    filter: &TrivialFilter,
) -> (Vec<ReactionRecord>, BTreeMap<TrivialReason, usize>) {
    let mut counts = BTreeMap::new();
    let kept = records
        .into_iter()
        .filter(|r| match filter.classify(&r.product) {
            Some(reason) => {
                *counts.entry(reason).or_insert(0) += 1;
                false
            }
            None => true,
        })
        .collect();
    (kept, counts)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
    /// Split each class separately and concatenate.
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
            seed: 0,
            stratified: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let ok = [self.train, self.valid, self.test]
            .iter()
            .all(|r| r.is_finite() && *r > 0.0)
            && ((self.train + self.valid + self.test) - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(DataError::BadSplit)
        }
    }

    fn sizes(&self, n: usize) -> (usize, usize) {
        let train = (n as f64 * self.train).round() as usize;
        let valid = ((n as f64 * self.valid).round() as usize).min(n - train.min(n));
        (train.min(n), valid)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle followed by a cut at the rounded ratio boundaries.
pub fn split_dataset<T: Clone>(
    records: &[T],
    spec: &SplitSpec,
    class_of: impl Fn(&T) -> u8,
) -> Result<Splits<T>, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_class.entry(class_of(r)).or_default().push(i);
        }
        by_class.into_values().collect()
    } else {
        vec![(0..records.len()).collect()]
    };
    let mut out = Splits {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for mut idx in groups {
        idx.shuffle(&mut rng);
        let (nt, nv) = spec.sizes(idx.len());
        out.train.extend(idx[..nt].iter().map(|&i| records[i].clone()));
        out.valid.extend(idx[nt..nt + nv].iter().map(|&i| records[i].clone()));
        out.test.extend(idx[nt + nv..].iter().map(|&i| records[i].clone()));
    }
    Ok(out)
}

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
const SPECIALS: [&str; 4] = ["<PAD>", "<UNK>", "<BOS>", "<EOS>"];

pub fn class_token(klass: u8) -> String {
    format!("<RX_{klass}>")
}

/// Token string <-> id bijection. Ids 0..4 are PAD, UNK, BOS, EOS; 4..14 the
/// ten class tokens; characters follow in code-point order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, u32>", into = "BTreeMap<String, u32>")]
pub struct Vocab {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl From<BTreeMap<String, u32>> for Vocab {
    fn from(map: BTreeMap<String, u32>) -> Self {
        let mut pairs: Vec<(String, u32)> = map.into_iter().collect();
        pairs.sort_by_key(|(_, id)| *id);
        let tokens: Vec<String> = pairs.into_iter().map(|(t, _)| t).collect();
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for BTreeMap<String, u32> {
    fn from(v: Vocab) -> Self {
        v.ids
    }
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { tokens, ids }
    }

    /// Vocabulary over the given strings plus the specials and class tokens.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let chars: BTreeSet<char> = texts.into_iter().flat_map(str::chars).collect();
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend((1..=NUM_CLASSES).map(class_token));
        tokens.extend(chars.into_iter().map(String::from));
        Vocab::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < SPECIALS.len()
    }

    /// Concatenates character tokens, stopping at EOS and skipping other specials.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut s = String::new();
        for &id in ids {
            if id == EOS {
                break;
            }
            if self.is_special(id) || (4..4 + NUM_CLASSES as u32).contains(&id) {
                continue;
            }
            if let Some(t) = self.token(id) {
                s.push_str(t);
            }
        }
        s
    }
}

/// Builds the vocabulary from the training split's source and target strings.
pub fn build_vocab(train: &[ReactionRecord]) -> Vocab {
    let texts: Vec<String> = train
        .iter()
        .flat_map(|r| [r.product_smiles(), r.reactants_smiles()])
        .collect();
    Vocab::build(texts.iter().map(String::as_str))
}

/// Class token, then the characters of the product SMILES in reverse order.
pub fn tokenize_source(product_smiles: &str, klass: u8, vocab: &Vocab) -> Result<Vec<u32>, DataError> {
    if !(1..=NUM_CLASSES).contains(&klass) {
        return Err(DataError::BadClass(klass));
    }
    let n = product_smiles.chars().count() + 1;
    if n > MAX_SEQ_LEN {
        return Err(DataError::TooLong {
            len: n,
            limit: MAX_SEQ_LEN,
        });
    }
    let mut out = Vec::with_capacity(n);
    out.push(vocab.id(&class_token(klass)));
    out.extend(
        product_smiles
            .chars()
            .rev()
            .map(|c| vocab.id(c.encode_utf8(&mut [0; 4]))),
    );
    Ok(out)
}

/// Characters of the joined reactant SMILES followed by EOS.
pub fn tokenize_target(reactants_smiles: &str, vocab: &Vocab) -> Result<Vec<u32>, DataError> {
    let n = reactants_smiles.chars().count() + 1;
    if n > MAX_SEQ_LEN {
        return Err(DataError::TooLong {
            len: n,
            limit: MAX_SEQ_LEN,
        });
    }
    let mut out: Vec<u32> = reactants_smiles
        .chars()
        .map(|c| vocab.id(c.encode_utf8(&mut [0; 4])))
        .collect();
    out.push(EOS);
    Ok(out)
}

/// Inverse of [`tokenize_source`] on the character part: returns the
/// un-reversed SMILES.
pub fn detokenize_source(tokens: &[u32], vocab: &Vocab) -> String {
    let rev: Vec<u32> = tokens.iter().rev().copied().collect();
    vocab.detokenize(&rev)
}

/// Line of a processed split file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedRecord {
    pub id: String,
    pub class: u8,
    pub src_tokens: Vec<u32>,
    pub tgt_tokens: Vec<u32>,
    pub product_smiles: String,
    pub reactants_smiles: String,
    /// Atom-mapped `reactants>>product`, needed for template extraction.
    pub mapped_reaction: String,
}

impl ProcessedRecord {
    /// Re-parses the mapped reaction.
    pub fn to_reaction(&self) -> Result<ReactionRecord, String> {
        parse_reaction(&self.id, self.class, &self.mapped_reaction, ParseOptions::lenient())
    }
}

/// Tokenizes records; over-length ones are dropped and counted.
pub fn tokenize_records(records: &[ReactionRecord], vocab: &Vocab) -> (Vec<ProcessedRecord>, usize) {
    let mut dropped = 0;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let product = r.product_smiles();
        let reactants = r.reactants_smiles();
        match (
            tokenize_source(&product, r.klass, vocab),
            tokenize_target(&reactants, vocab),
        ) {
            (Ok(src), Ok(tgt)) => out.push(ProcessedRecord {
                id: r.id.clone(),
                class: r.klass,
                src_tokens: src,
                tgt_tokens: tgt,
                product_smiles: product,
                reactants_smiles: reactants,
                mapped_reaction: r.mapped_text(),
            }),
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        info!("dropped {dropped} over-length records");
    }
    (out, dropped)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DataError> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| DataError::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            serde_json::from_str(l).map_err(|e| DataError::Format {
                line: k + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Per-class record counts for classes 1..=10 (zeros included).
pub fn class_counts(classes: impl IntoIterator<Item = u8>) -> BTreeMap<u8, usize> {
    let mut counts: BTreeMap<u8, usize> = (1..=NUM_CLASSES).map(|c| (c, 0)).collect();
    for c in classes {
        *counts.entry(c).or_insert(0) += 1;
    }
    counts
}
