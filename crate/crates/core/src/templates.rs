//! Reaction-center detection, retrosynthetic template extraction, template
//! application in both directions, and the deduplicated rulebase.
//!
//! A template is a pair of patterns, product core and reactant core, whose
//! shared atoms carry matching correspondence labels. The reactant core may
//! have several fragments, one per reactant molecule touched by the reaction.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{
    canonical_smiles, for_each_match, refine_ranks, strip_atom_maps, transfer_chirality, Atom, BondOrder,
    BondPredicate, MolGraph, Pattern,
};
use crate::data::{DataError, ReactionRecord};

/// Upper bound on embeddings explored per template application. Symmetric
/// targets (tert-butyl groups, benzene rings) produce many equivalent
/// embeddings; past this cap the rest are ignored.
pub const MAX_EMBEDDINGS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MappingError {
    #[error("product atom {0} has no atom map")]
    UnmappedProductAtom(usize),
    #[error("atom map {0} occurs twice in the product")]
    DuplicateProductMap(u32),
    #[error("atom map {0} occurs twice in the reactants")]
    DuplicateReactantMap(u32),
    #[error("product atom map {0} has no reactant counterpart")]
    MissingReactantAtom(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractionError {
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error("reaction center is empty")]
    EmptyCenter,
    #[error("template text {text:?}: {message}")]
    Text { text: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeReason {
    BondAdded,
    BondRemoved,
    BondOrderChanged,
    ChargeChanged,
    HydrogenCountChanged,
    AromaticityChanged,
}

/// Atoms whose environment differs between reactants and product.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReactionCenter {
    /// Changed atom maps; every one occurs on both sides.
    pub maps: BTreeSet<u32>,
    pub reasons: BTreeMap<u32, BTreeSet<ChangeReason>>,
    /// Leaving-group attachment points: unmapped atoms of the reactant union
    /// graph bonded to a center atom. Reactant atoms whose map does not occur
    /// in the product count as unmapped.
    pub leaving: Vec<usize>,
}

impl ReactionCenter {
    pub fn is_empty(&self) -> bool {
        self.maps.is_empty() && self.leaving.is_empty()
    }
}

/// Map-indexed view of a reaction used by center detection and extraction.
struct MappedReaction {
    product: MolGraph,
    reactants: MolGraph,
    product_atom: BTreeMap<u32, usize>,
    reactant_atom: BTreeMap<u32, usize>,
}

impl MappedReaction {
    fn new(r: &ReactionRecord) -> Result<Self, MappingError> {
        let product = r.product.clone();
        let (reactants, _) = MolGraph::union(&r.reactants);
        let mut product_atom = BTreeMap::new();
        for (i, a) in product.atoms().iter().enumerate() {
            let m = a.atom_map.ok_or(MappingError::UnmappedProductAtom(i))?;
            if product_atom.insert(m, i).is_some() {
                return Err(MappingError::DuplicateProductMap(m));
            }
        }
        let mut reactant_atom = BTreeMap::new();
        for (i, a) in reactants.atoms().iter().enumerate() {
            if let Some(m) = a.atom_map {
                if reactant_atom.insert(m, i).is_some() {
                    return Err(MappingError::DuplicateReactantMap(m));
                }
            }
        }
        if let Some(&m) = product_atom.keys().find(|m| !reactant_atom.contains_key(m)) {
            return Err(MappingError::MissingReactantAtom(m));
        }
        // maps absent from the product do not link anything
        reactant_atom.retain(|m, _| product_atom.contains_key(m));
        Ok(MappedReaction {
            product,
            reactants,
            product_atom,
            reactant_atom,
        })
    }

    /// Map of a reactant atom if it corresponds to a product atom.
    fn reactant_map(&self, i: usize) -> Option<u32> {
        self.reactants
            .atom(i)
            .atom_map
            .filter(|m| self.product_atom.contains_key(m))
    }

    fn center(&self) -> ReactionCenter {
        let mut center = ReactionCenter::default();
        for (&m, &pi) in &self.product_atom {
            let ri = self.reactant_atom[&m];
            let mut reasons = BTreeSet::new();
            let p_nbrs: BTreeMap<u32, BondOrder> = self
                .product
                .neighbors(pi)
                .iter()
                .map(|&(j, b)| {
                    (
                        self.product.atom(j).atom_map.expect("mapped"),
                        self.product.bond(b).order,
                    )
                })
                .collect();
            let mut r_nbrs = BTreeMap::new();
            for &(j, b) in self.reactants.neighbors(ri) {
                match self.reactant_map(j) {
                    Some(mj) => {
                        r_nbrs.insert(mj, self.reactants.bond(b).order);
                    }
                    None => {
                        reasons.insert(ChangeReason::BondRemoved);
                    }
                }
            }
            for (k, o) in &p_nbrs {
                match r_nbrs.get(k) {
                    None => {
                        reasons.insert(ChangeReason::BondAdded);
                    }
                    Some(ro) if ro != o => {
                        reasons.insert(ChangeReason::BondOrderChanged);
                    }
                    _ => {}
                }
            }
            if r_nbrs.keys().any(|k| !p_nbrs.contains_key(k)) {
                reasons.insert(ChangeReason::BondRemoved);
            }
            let (pa, ra) = (self.product.atom(pi), self.reactants.atom(ri));
            if pa.charge != ra.charge {
                reasons.insert(ChangeReason::ChargeChanged);
            }
            if self.product.total_h(pi) != self.reactants.total_h(ri) {
                reasons.insert(ChangeReason::HydrogenCountChanged);
            }
            if pa.aromatic != ra.aromatic {
                reasons.insert(ChangeReason::AromaticityChanged);
            }
            if !reasons.is_empty() {
                center.maps.insert(m);
                center.reasons.insert(m, reasons);
            }
        }
        let mut leaving = BTreeSet::new();
        for m in &center.maps {
            for &(j, _) in self.reactants.neighbors(self.reactant_atom[m]) {
                if self.reactant_map(j).is_none() {
                    leaving.insert(j);
                }
            }
        }
        center.leaving = leaving.into_iter().collect();
        center
    }
}

/// Atom maps whose bonded-neighbour multiset, charge, H count or aromatic
/// flag differ between the reactant and product occurrences.
pub fn find_reaction_center(r: &ReactionRecord) -> Result<ReactionCenter, MappingError> {
    Ok(MappedReaction::new(r)?.center())
}

/// A retrosynthetic rewrite rule in canonical form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetroTemplate {
    pub product: Pattern,
    /// All reactant-side fragments in one pattern.
    pub reactants: Pattern,
    pub klass: u8,
    /// Canonical `product>>reactants` text; also the rulebase key.
    pub text: String,
}

impl RetroTemplate {
    /// Canonicalizes a pattern pair: ranks both sides as one graph (with
    /// correspondence edges), renumbers labels 1..k in product rank order and
    /// writes both sides in rank order.
    pub fn new(product: &Pattern, reactants: &Pattern, klass: u8) -> Result<Self, ExtractionError> {
        let text = canonical_text(product, reactants)?;
        Self::from_canonical(text, klass)
    }

    /// Parses `product>>reactants` text; the stored text is re-canonicalized.
    pub fn from_text(text: &str, klass: u8) -> Result<Self, ExtractionError> {
        let (p, r) = split_sides(text)?;
        Self::new(&p, &r, klass)
    }

    fn from_canonical(text: String, klass: u8) -> Result<Self, ExtractionError> {
        let (product, reactants) = split_sides(&text)?;
        Ok(RetroTemplate {
            product,
            reactants,
            klass,
            text,
        })
    }

    /// Reactant-side fragments as separate patterns.
    pub fn reactant_cores(&self) -> Vec<Pattern> {
        self.reactants.fragments()
    }
}

fn split_sides(text: &str) -> Result<(Pattern, Pattern), ExtractionError> {
    let bad = |message: String| ExtractionError::Text {
        text: text.to_string(),
        message,
    };
    let (p, r) = text.split_once(">>").ok_or_else(|| bad("missing '>>'".into()))?;
    let p = Pattern::parse(p).map_err(|e| bad(format!("product side: {e}")))?;
    let r = Pattern::parse(r).map_err(|e| bad(format!("reactant side: {e}")))?;
    Ok((p, r))
}

const CORRESPONDENCE: u8 = 100;

fn canonical_text(product: &Pattern, reactants: &Pattern) -> Result<String, ExtractionError> {
    let bad = |message: &str| ExtractionError::Text {
        text: String::new(),
        message: message.to_string(),
    };
    let labels = |p: &Pattern| -> Result<BTreeMap<u32, usize>, ExtractionError> {
        let mut out = BTreeMap::new();
        for (i, n) in p.nodes.iter().enumerate() {
            if let Some(l) = n.label {
                if out.insert(l, i).is_some() {
                    return Err(bad("duplicate correspondence label"));
                }
            }
        }
        Ok(out)
    };
    let (pl, rl) = (labels(product)?, labels(reactants)?);
    if pl.keys().ne(rl.keys()) {
        return Err(bad("labels differ between the two sides"));
    }
    if product.is_empty() {
        return Err(bad("empty product core"));
    }
    let np = product.len();
    let mut keys: Vec<(u8, _, bool)> = product.ranking_keys().into_iter().map(|(p, l)| (0u8, p, l)).collect();
    keys.extend(reactants.ranking_keys().into_iter().map(|(p, l)| (1u8, p, l)));
    let mut adj = product.coloured_adjacency();
    adj.extend(
        reactants
            .coloured_adjacency()
            .into_iter()
            .map(|l| l.into_iter().map(|(j, c)| (j + np, c)).collect()),
    );
    for (l, &i) in &pl {
        let j = rl[l] + np;
        adj[i].push((j, CORRESPONDENCE));
        adj[j].push((i, CORRESPONDENCE));
    }
    let ranks = refine_ranks(&keys, &adj);
    let mut by_rank: Vec<(usize, u32)> = pl.iter().map(|(&l, &i)| (ranks[i], l)).collect();
    by_rank.sort_unstable();
    let relabel: BTreeMap<u32, u32> = by_rank
        .iter()
        .enumerate()
        .map(|(k, &(_, l))| (l, k as u32 + 1))
        .collect();
    let apply = |p: &Pattern| {
        let mut q = p.clone();
        for n in &mut q.nodes {
            n.label = n.label.map(|l| relabel[&l]);
        }
        q
    };
    Ok(format!(
        "{}>>{}",
        apply(product).write_with_ranks(&ranks[..np]),
        apply(reactants).write_with_ranks(&ranks[np..])
    ))
}

/// Builds the template of one mapped reaction: center atoms plus every atom
/// one bond away on either side, with exact predicates.
pub fn extract_template(r: &ReactionRecord) -> Result<RetroTemplate, ExtractionError> {
    let mr = MappedReaction::new(r)?;
    let center = mr.center();
    if center.is_empty() {
        return Err(ExtractionError::EmptyCenter);
    }
    let mut core: BTreeSet<u32> = center.maps.clone();
    for m in &center.maps {
        for &(j, _) in mr.product.neighbors(mr.product_atom[m]) {
            core.insert(mr.product.atom(j).atom_map.expect("mapped"));
        }
        for &(j, _) in mr.reactants.neighbors(mr.reactant_atom[m]) {
            if let Some(mj) = mr.reactant_map(j) {
                core.insert(mj);
            }
        }
    }
    let p_atoms: Vec<usize> = core.iter().map(|m| mr.product_atom[m]).collect();
    let mut r_atoms: Vec<usize> = core.iter().map(|m| mr.reactant_atom[m]).collect();
    r_atoms.extend(&center.leaving);
    r_atoms.sort_unstable();
    let product = Pattern::from_atoms(&mr.product, &p_atoms, |i| mr.product.atom(i).atom_map);
    let reactants = Pattern::from_atoms(&mr.reactants, &r_atoms, |i| mr.reactant_map(i));
    RetroTemplate::new(&product, &reactants, r.klass)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewriteFailure {
    #[error("label {0} has no counterpart on the other side")]
    UnpairedLabel(u32),
    #[error("cannot create an atom from a predicate without an element")]
    NoElement,
    #[error("cannot create a bond from an unspecified bond predicate")]
    UnspecifiedBond,
    #[error("bond between atoms {0} and {1} already exists")]
    DuplicateBond(usize, usize),
    #[error("atom {atom} exceeds its valence ({used} > {allowed})")]
    Valence { atom: usize, used: u8, allowed: u8 },
    #[error("aromatic atom {0} is not part of an aromatic system")]
    Aromaticity(usize),
}

/// Result of [`rewrite`].
#[derive(Debug, Clone)]
pub struct Rewritten {
    pub mol: MolGraph,
    /// New atom index of every `to` node.
    pub to_atoms: Vec<usize>,
}

/// Replaces the matched `from` subgraph of `source` with `to`.
///
/// Labelled atoms keep their identity and take element, aromaticity, charge
/// and H count from the `to` predicate (a missing H constraint leaves the count
/// to valence rules). Unlabelled `from` atoms are deleted, unlabelled `to`
/// atoms are created. Bonds between matched atoms that the `from` pattern
/// names are replaced by the `to` edges; every other bond is carried over.
/// Chirality survives only on atoms whose ligand set is unchanged.
pub fn rewrite(
    source: &MolGraph,
    from: &Pattern,
    to: &Pattern,
    embedding: &[usize],
) -> Result<Rewritten, RewriteFailure> {
    let n = source.atom_count();
    let mut matched = vec![None; n];
    for (k, &a) in embedding.iter().enumerate() {
        matched[a] = Some(k);
    }
    let mut to_of_from = vec![None; from.len()];
    for (k, node) in from.nodes.iter().enumerate() {
        if let Some(l) = node.label {
            to_of_from[k] = Some(to.node_with_label(l).ok_or(RewriteFailure::UnpairedLabel(l))?);
        }
    }
    for node in &to.nodes {
        if let Some(l) = node.label {
            from.node_with_label(l).ok_or(RewriteFailure::UnpairedLabel(l))?;
        }
    }

    let mut g = MolGraph::new();
    let mut index = vec![None; n];
    let mut to_atoms = vec![usize::MAX; to.len()];
    for (a, atom) in source.atoms().iter().enumerate() {
        let mut atom = atom.clone();
        atom.chirality = None;
        if let Some(k) = matched[a] {
            match to_of_from[k] {
                None => continue,
                Some(t) => {
                    let p = &to.nodes[t].predicate;
                    if let Some(e) = p.element {
                        atom.element = e;
                    }
                    if let Some(ar) = p.aromatic {
                        atom.aromatic = ar;
                    }
                    if let Some(c) = p.charge {
                        atom.charge = c;
                    }
                    atom.explicit_h = p.h_count;
                    let new = g.add_atom(atom);
                    to_atoms[t] = new;
                    index[a] = Some(new);
                    continue;
                }
            }
        }
        index[a] = Some(g.add_atom(atom));
    }
    for (t, node) in to.nodes.iter().enumerate() {
        if node.label.is_none() {
            let p = &node.predicate;
            let element = p.element.ok_or(RewriteFailure::NoElement)?;
            let mut atom = Atom::new(element);
            atom.aromatic = p.aromatic.unwrap_or(false);
            atom.charge = p.charge.unwrap_or(0);
            atom.explicit_h = p.h_count;
            to_atoms[t] = g.add_atom(atom);
        }
    }

    for b in source.bonds() {
        let (Some(x), Some(y)) = (index[b.a], index[b.b]) else {
            continue;
        };
        if let (Some(ka), Some(kb)) = (matched[b.a], matched[b.b]) {
            if from.edge_between(ka, kb).is_some() {
                continue;
            }
        }
        g.add_bond_directed(x, y, b.order, b.direction)
            .map_err(|_| RewriteFailure::DuplicateBond(x, y))?;
    }
    for e in &to.edges {
        let BondPredicate::Order(order) = e.bond else {
            return Err(RewriteFailure::UnspecifiedBond);
        };
        let (x, y) = (to_atoms[e.a], to_atoms[e.b]);
        g.add_bond(x, y, order)
            .map_err(|_| RewriteFailure::DuplicateBond(x, y))?;
    }

    for a in 0..n {
        if let Some(new) = index[a] {
            if source.atom(a).chirality.is_some() {
                let tag = transfer_chirality(source, a, &g, new, |o| index[o]);
                g.atom_mut(new).chirality = tag;
            }
        }
    }
    check_chemistry(&g)?;
    g.normalize_hydrogens();
    Ok(Rewritten { mol: g, to_atoms })
}

fn check_chemistry(g: &MolGraph) -> Result<(), RewriteFailure> {
    for i in 0..g.atom_count() {
        if let Some((used, allowed)) = g.valence_violation(i) {
            return Err(RewriteFailure::Valence { atom: i, used, allowed });
        }
        let aromatic_bonds = g
            .neighbors(i)
            .iter()
            .filter(|(_, b)| g.bond(*b).order == BondOrder::Aromatic)
            .count();
        if g.atom(i).aromatic != (aromatic_bonds > 0) || aromatic_bonds == 1 {
            return Err(RewriteFailure::Aromaticity(i));
        }
    }
    Ok(())
}

/// Retro application: every distinct reactant set (canonical, components
/// sorted and joined by `.`) obtained from some embedding of the product core
/// in `target`. Embeddings whose rewrite fails are skipped.
pub fn apply_template(t: &RetroTemplate, target: &MolGraph) -> Vec<String> {
    let mut out = BTreeSet::new();
    let mut seen = 0;
    for_each_match(&t.product, target, |emb| {
        match rewrite(target, &t.product, &t.reactants, emb) {
            Ok(rw) => {
                out.insert(canonical_smiles(&rw.mol));
            }
            Err(e) => debug!("{}: embedding {emb:?} skipped: {e}", t.text),
        }
        seen += 1;
        seen < MAX_EMBEDDINGS
    });
    out.into_iter().collect()
}

/// Forward application to a reactant set: the distinct products, keeping only
/// the components that contain template atoms.
pub fn apply_forward(t: &RetroTemplate, reactants: &MolGraph) -> Vec<String> {
    let mut out = BTreeSet::new();
    let mut seen = 0;
    for_each_match(&t.reactants, reactants, |emb| {
        if let Ok(rw) = rewrite(reactants, &t.reactants, &t.product, emb) {
            let keep: BTreeSet<usize> = rw.to_atoms.iter().copied().collect();
            let atoms: Vec<usize> = rw
                .mol
                .components()
                .into_iter()
                .filter(|c| c.iter().any(|a| keep.contains(a)))
                .flatten()
                .collect();
            out.insert(canonical_smiles(&rw.mol.subgraph(&atoms)));
        }
        seen += 1;
        seen < MAX_EMBEDDINGS
    });
    out.into_iter().collect()
}

/// True iff the template regenerates the reactants from the product and the
/// product from the reactants of `r` (canonical string equality).
pub fn validate_template(t: &RetroTemplate, r: &ReactionRecord) -> bool {
    let target = strip_atom_maps(&r.product);
    let reactants = r.reactants_smiles();
    if !apply_template(t, &target).contains(&reactants) {
        return false;
    }
    let (union, _) = MolGraph::union(&r.reactants);
    apply_forward(t, &union).contains(&r.product_smiles())
}

/// One deduplicated rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub template: RetroTemplate,
    pub class_counts: BTreeMap<u8, usize>,
    pub provenance_ids: BTreeSet<String>,
}

impl Rule {
    pub fn total_count(&self) -> usize {
        self.class_counts.values().sum()
    }

    pub fn count_for(&self, klass: u8) -> usize {
        self.class_counts.get(&klass).copied().unwrap_or(0)
    }
}

/// JSON-lines form of a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleLine {
    pub text: String,
    pub class_counts: BTreeMap<u8, usize>,
    pub total_count: usize,
    pub provenance_ids: Vec<String>,
}

/// Unique rules keyed by canonical template text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleBase {
    rules: BTreeMap<String, Rule>,
}

impl RuleBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<&Rule> {
        self.rules.get(text)
    }

    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.values()
    }

    /// Rules with a nonzero count for `klass`.
    pub fn rules_for_class(&self, klass: u8) -> impl Iterator<Item = &Rule> {
        self.rules.values().filter(move |r| r.count_for(klass) > 0)
    }

    /// Sum of all occurrence counts.
    pub fn total_occurrences(&self) -> usize {
        self.rules.values().map(Rule::total_count).sum()
    }

    pub fn add(&mut self, template: RetroTemplate, klass: u8, provenance: &str) {
        let rule = self.rules.entry(template.text.clone()).or_insert_with(|| Rule {
            template,
            class_counts: BTreeMap::new(),
            provenance_ids: BTreeSet::new(),
        });
        *rule.class_counts.entry(klass).or_insert(0) += 1;
        rule.provenance_ids.insert(provenance.to_string());
    }

    /// Adds counts and provenance of `other`; associative and commutative.
    pub fn merge(&mut self, other: RuleBase) {
        for (text, rule) in other.rules {
            match self.rules.get_mut(&text) {
                None => {
                    self.rules.insert(text, rule);
                }
                Some(mine) => {
                    for (k, c) in rule.class_counts {
                        *mine.class_counts.entry(k).or_insert(0) += c;
                    }
                    mine.provenance_ids.extend(rule.provenance_ids);
                }
            }
        }
    }

    pub fn to_lines(&self) -> Vec<RuleLine> {
        self.rules
            .values()
            .map(|r| RuleLine {
                text: r.template.text.clone(),
                class_counts: r.class_counts.clone(),
                total_count: r.total_count(),
                provenance_ids: r.provenance_ids.iter().cloned().collect(),
            })
            .collect()
    }

    pub fn from_lines(lines: Vec<RuleLine>) -> Result<Self, ExtractionError> {
        let mut rb = RuleBase::new();
        for line in lines {
            let klass = line.class_counts.keys().next().copied().unwrap_or(0);
            let template = RetroTemplate::from_text(&line.text, klass)?;
            let mut part = RuleBase::new();
            part.rules.insert(
                template.text.clone(),
                Rule {
                    template,
                    class_counts: line.class_counts,
                    provenance_ids: line.provenance_ids.into_iter().collect(),
                },
            );
            rb.merge(part);
        }
        Ok(rb)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        crate::data::write_jsonl(path, &self.to_lines())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let lines: Vec<RuleLine> = crate::data::read_jsonl(path)?;
        RuleBase::from_lines(lines).map_err(|e| DataError::Format {
            line: 0,
            message: e.to_string(),
        })
    }
}

/// Outcome of extraction plus validation for one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleOutcome {
    Valid(RetroTemplate),
    Invalid(RetroTemplate),
    Failed(ExtractionError),
}

pub fn extract_validated(r: &ReactionRecord) -> RuleOutcome {
    match extract_template(r) {
        Err(e) => RuleOutcome::Failed(e),
        Ok(t) if validate_template(&t, r) => RuleOutcome::Valid(t),
        Ok(t) => RuleOutcome::Invalid(t),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleStats {
    pub reactions: usize,
    pub extracted: usize,
    pub valid: usize,
    pub unique: usize,
    /// `valid / reactions`, 0 for empty input.
    pub coverage: f64,
    pub mapping_errors: usize,
    pub empty_centers: usize,
}

/// Extracts and validates a template per record (in parallel) and merges the
/// valid ones in input order.
pub fn build_rulebase(records: &[ReactionRecord]) -> (RuleBase, RuleStats) {
    let outcomes: Vec<RuleOutcome> = records.par_iter().map(extract_validated).collect();
    let mut rb = RuleBase::new();
    let mut stats = RuleStats {
        reactions: records.len(),
        ..RuleStats::default()
    };
    for (r, outcome) in records.iter().zip(outcomes) {
        match outcome {
            RuleOutcome::Valid(t) => {
                stats.extracted += 1;
                stats.valid += 1;
                rb.add(t, r.klass, &r.id);
            }
            RuleOutcome::Invalid(t) => {
                stats.extracted += 1;
                debug!("{}: template {} failed validation", r.id, t.text);
            }
            RuleOutcome::Failed(e) => {
                match e {
                    ExtractionError::Mapping(_) => stats.mapping_errors += 1,
                    ExtractionError::EmptyCenter => stats.empty_centers += 1,
                    ExtractionError::Text { .. } => {}
                }
                debug!("{}: no template: {e}", r.id);
            }
        }
    }
    stats.unique = rb.len();
    stats.coverage = if stats.reactions == 0 {
        0.0
    } else {
        stats.valid as f64 / stats.reactions as f64
    };
    (rb, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{parse_smiles, ParseOptions};
    use crate::data::parse_reaction;

    const ESTER: &str = "[CH3:1][C:2](=[O:3])[OH:7].[OH:4][CH2:5][CH3:6]>>[CH3:1][C:2](=[O:3])[O:4][CH2:5][CH3:6]";

    fn rec(text: &str) -> ReactionRecord {
        parse_reaction("t", 2, text, ParseOptions::default()).unwrap()
    }

    #[test]
    fn esterification_center() {
        let r = rec(ESTER);
        let c = find_reaction_center(&r).unwrap();
        // map 7 is absent from the product, so the hydroxyl O is a leaving atom
        assert_eq!(c.maps, BTreeSet::from([2, 4]));
        assert_eq!(c.leaving.len(), 1);
        let (u, _) = MolGraph::union(&r.reactants);
        assert_eq!(u.atom(c.leaving[0]).atom_map, Some(7));
        assert!(c.reasons[&2].contains(&ChangeReason::BondAdded));
        assert!(c.reasons[&2].contains(&ChangeReason::BondRemoved));
        assert_eq!(
            c.reasons[&4],
            BTreeSet::from([ChangeReason::BondAdded, ChangeReason::HydrogenCountChanged])
        );
    }

    #[test]
    fn identity_and_mapping_errors() {
        let same = rec("[CH3:1][OH:2]>>[CH3:1][OH:2]");
        assert!(find_reaction_center(&same).unwrap().is_empty());
        assert_eq!(extract_template(&same), Err(ExtractionError::EmptyCenter));
        let missing = rec("[CH3:1][OH:2]>>[CH3:1][O:2][CH3:7]");
        assert_eq!(
            find_reaction_center(&missing),
            Err(MappingError::MissingReactantAtom(7))
        );
        let unmapped = rec("[CH3:1][OH:2]>>[CH3:1]O");
        assert_eq!(
            find_reaction_center(&unmapped),
            Err(MappingError::UnmappedProductAtom(1))
        );
    }

    #[test]
    fn esterification_template_structure() {
        let t = extract_template(&rec(ESTER)).unwrap();
        // product core: methyl, carbonyl C, carbonyl O, ester O, CH2
        assert_eq!(t.product.len(), 5);
        assert!(t.product.nodes.iter().all(|n| n.label.is_some()));
        let frags = t.reactant_cores();
        assert_eq!(frags.len(), 2);
        let mut sizes: Vec<usize> = frags.iter().map(Pattern::len).collect();
        sizes.sort_unstable();
        // acid: CH3, C, =O, leaving OH ; alcohol: O, CH2
        assert_eq!(sizes, vec![2, 4]);
        assert_eq!(t.reactants.nodes.iter().filter(|n| n.label.is_none()).count(), 1);
        let back = RetroTemplate::from_text(&t.text, 2).unwrap();
        assert_eq!(back.text, t.text);
    }

    #[test]
    fn esterification_applies_both_ways() {
        let r = rec(ESTER);
        let t = extract_template(&r).unwrap();
        let target = parse_smiles("CC(=O)OCC").unwrap();
        assert_eq!(apply_template(&t, &target), vec!["CC(=O)O.CCO".to_string()]);
        assert!(validate_template(&t, &r));
        assert!(apply_template(&t, &parse_smiles("CCCC").unwrap()).is_empty());
    }

    #[test]
    fn corrupted_template_fails_validation() {
        let r = rec(ESTER);
        let t = extract_template(&r).unwrap();
        let mut p = t.product.clone();
        let k = p
            .nodes
            .iter()
            .position(|n| n.predicate.element == Some(crate::chem::Element::O))
            .unwrap();
        p.nodes[k].predicate.element = Some(crate::chem::Element::S);
        let bad = RetroTemplate::new(&p, &t.reactants, 2).unwrap();
        assert!(!validate_template(&bad, &r));
    }

    #[test]
    fn leaving_group_beyond_one_bond_is_lost() {
        // Boc removal: the tert-butoxycarbonyl group is unmapped
        let r = rec("[CH3:1][NH:2]C(=O)OC(C)(C)C>>[CH3:1][NH2:2]");
        let t = extract_template(&r).unwrap();
        // only the carbonyl carbon enters the reactant core
        assert_eq!(t.reactants.len(), 3);
        assert!(!validate_template(&t, &r));
    }

    #[test]
    fn rulebase_dedup_and_roundtrip() {
        let a = rec(ESTER);
        let mut b = a.clone();
        b.id = "u".into();
        let (rb, stats) = build_rulebase(&[a.clone(), b]);
        assert_eq!(rb.len(), 1);
        assert_eq!(stats.valid, 2);
        let rule = rb.rules().next().unwrap();
        assert_eq!(rule.total_count(), 2);
        assert_eq!(rule.count_for(2), 2);
        let back = RuleBase::from_lines(rb.to_lines()).unwrap();
        assert_eq!(back, rb);
        let (empty, s) = build_rulebase(&[]);
        assert!(empty.is_empty());
        assert_eq!(s.coverage, 0.0);
    }
}
