//! Substructure patterns and their SMARTS-like text form.
//!
//! Atom syntax: `[` primary (`;` constraint)* (`:` label)? `]` where the
//! primary is an element symbol (capitalized = aliphatic, lowercase =
//! aromatic), `#n` (element, any aromaticity), `A` / `a` (any aliphatic /
//! aromatic atom) or `*` (anything). Constraints: `+n` / `-n` formal charge,
//! `Dn` minimum heavy-atom degree, `Hn` exact hydrogen count. Bonds are always
//! written: `-` `=` `#` `:` or `~` (any). Branches, ring closures and `.`
//! follow SMILES.
//!
//! Example: `[C;+0;D3;H0:1](=[O;+0;D1;H0:2])-[O;+0;D2;H0:3]`

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::canon::refine_ranks;
use super::element::Element;
use super::mol::{BondOrder, MolGraph};
use super::traverse::{plan_traversal, Step};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AtomPredicate {
    pub element: Option<Element>,
    pub aromatic: Option<bool>,
    pub charge: Option<i8>,
    pub min_degree: Option<u8>,
    pub h_count: Option<u8>,
}

impl AtomPredicate {
    pub fn any() -> Self {
        Self::default()
    }

    /// Every field fixed to the atom's current state.
    pub fn exact(mol: &MolGraph, i: usize) -> Self {
        let a = mol.atom(i);
        AtomPredicate {
            element: Some(a.element),
            aromatic: Some(a.aromatic),
            charge: Some(a.charge),
            min_degree: Some(mol.heavy_degree(i).min(u8::MAX as usize) as u8),
            h_count: Some(mol.total_h(i)),
        }
    }

    pub fn matches(&self, mol: &MolGraph, i: usize) -> bool {
        let a = mol.atom(i);
        self.element.is_none_or(|e| e == a.element)
            && self.aromatic.is_none_or(|ar| ar == a.aromatic)
            && self.charge.is_none_or(|c| c == a.charge)
            && self.min_degree.is_none_or(|d| mol.heavy_degree(i) >= d as usize)
            && self.h_count.is_none_or(|h| h == mol.total_h(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondPredicate {
    Any,
    Order(BondOrder),
}

impl BondPredicate {
    pub fn matches(self, order: BondOrder) -> bool {
        match self {
            BondPredicate::Any => true,
            BondPredicate::Order(o) => o == order,
        }
    }

    fn code(self) -> u8 {
        match self {
            BondPredicate::Any => 0,
            BondPredicate::Order(o) => o.code(),
        }
    }

    fn symbol(self) -> char {
        match self {
            BondPredicate::Any => '~',
            BondPredicate::Order(BondOrder::Single) => '-',
            BondPredicate::Order(BondOrder::Double) => '=',
            BondPredicate::Order(BondOrder::Triple) => '#',
            BondPredicate::Order(BondOrder::Aromatic) => ':',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatternNode {
    pub predicate: AtomPredicate,
    /// Correspondence label linking nodes across the two sides of a template.
    pub label: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatternEdge {
    pub a: usize,
    pub b: usize,
    pub bond: BondPredicate,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pattern {
    pub nodes: Vec<PatternNode>,
    pub edges: Vec<PatternEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("pattern syntax error at byte {position}: {message}")]
pub struct PatternError {
    pub position: usize,
    pub message: String,
}

impl Pattern {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, predicate: AtomPredicate, label: Option<u32>) -> usize {
        self.nodes.push(PatternNode { predicate, label });
        self.nodes.len() - 1
    }

    pub fn add_edge(&mut self, a: usize, b: usize, bond: BondPredicate) {
        assert!(a != b && a < self.nodes.len() && b < self.nodes.len());
        self.edges.push(PatternEdge { a, b, bond });
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(neighbour, edge index)` lists.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (k, e) in self.edges.iter().enumerate() {
            adj[e.a].push((e.b, k));
            adj[e.b].push((e.a, k));
        }
        adj
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<&PatternEdge> {
        self.edges
            .iter()
            .find(|e| (e.a == a && e.b == b) || (e.a == b && e.b == a))
    }

    pub fn node_with_label(&self, label: u32) -> Option<usize> {
        self.nodes.iter().position(|n| n.label == Some(label))
    }

    /// Pattern with exact predicates over the induced subgraph on `atoms`.
    /// Labels come from `label_of`.
    pub fn from_atoms(mol: &MolGraph, atoms: &[usize], label_of: impl Fn(usize) -> Option<u32>) -> Pattern {
        let mut p = Pattern::new();
        let mut index = BTreeMap::new();
        for &i in atoms {
            index.insert(i, p.add_node(AtomPredicate::exact(mol, i), label_of(i)));
        }
        for b in mol.bonds() {
            if let (Some(&x), Some(&y)) = (index.get(&b.a), index.get(&b.b)) {
                p.add_edge(x, y, BondPredicate::Order(b.order));
            }
        }
        p
    }

    /// Colours for canonical ranking; label values are ignored, only presence counts.
    pub(crate) fn ranking_keys(&self) -> Vec<(AtomPredicate, bool)> {
        self.nodes.iter().map(|n| (n.predicate, n.label.is_some())).collect()
    }

    pub(crate) fn coloured_adjacency(&self) -> Vec<Vec<(usize, u8)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.a].push((e.b, e.bond.code()));
            adj[e.b].push((e.a, e.bond.code()));
        }
        adj
    }

    pub fn canonical_ranks(&self) -> Vec<usize> {
        refine_ranks(&self.ranking_keys(), &self.coloured_adjacency())
    }

    /// Text form in canonical order.
    pub fn to_text(&self) -> String {
        self.write_with_ranks(&self.canonical_ranks())
    }

    pub fn write_with_ranks(&self, ranks: &[usize]) -> String {
        let plan = plan_traversal(&self.adjacency(), ranks);
        let mut out = String::new();
        for step in &plan.steps {
            match step {
                Step::Dot => out.push('.'),
                Step::Open => out.push('('),
                Step::Close => out.push(')'),
                Step::Atom { atom, parent, rings } => {
                    if let Some((_, e)) = parent {
                        out.push(self.edges[*e].bond.symbol());
                    }
                    out.push_str(&node_text(&self.nodes[*atom]));
                    for r in rings {
                        if r.opening {
                            out.push(self.edges[r.bond].bond.symbol());
                        }
                        if r.digit >= 10 {
                            out.push_str(&format!("%{:02}", r.digit));
                        } else {
                            out.push(char::from(b'0' + r.digit as u8));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Pattern, PatternError> {
        PatternParser {
            s: text.as_bytes(),
            pos: 0,
        }
        .run()
    }

    /// Connected pieces as separate patterns (labels kept).
    pub fn fragments(&self) -> Vec<Pattern> {
        let adj = self.adjacency();
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            let mut comp = vec![s];
            seen[s] = true;
            let mut k = 0;
            while k < comp.len() {
                for &(v, _) in &adj[comp[k]] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                    }
                }
                k += 1;
            }
            comp.sort_unstable();
            let mut p = Pattern::new();
            for &i in &comp {
                p.nodes.push(self.nodes[i].clone());
            }
            for e in &self.edges {
                if let (Some(a), Some(b)) = (comp.iter().position(|&x| x == e.a), comp.iter().position(|&x| x == e.b)) {
                    p.add_edge(a, b, e.bond);
                }
            }
            out.push(p);
        }
        out
    }
}

fn node_text(node: &PatternNode) -> String {
    let p = &node.predicate;
    let mut s = String::from("[");
    match (p.element, p.aromatic) {
        (Some(e), Some(true)) => s.push_str(&e.symbol().to_ascii_lowercase()),
        (Some(e), Some(false)) => s.push_str(e.symbol()),
        (Some(e), None) => s.push_str(&format!("#{}", e.atomic_number())),
        (None, Some(true)) => s.push('a'),
        (None, Some(false)) => s.push('A'),
        (None, None) => s.push('*'),
    }
    if let Some(c) = p.charge {
        if c >= 0 {
            s.push_str(&format!(";+{c}"));
        } else {
            s.push_str(&format!(";-{}", -c));
        }
    }
    if let Some(d) = p.min_degree {
        s.push_str(&format!(";D{d}"));
    }
    if let Some(h) = p.h_count {
        s.push_str(&format!(";H{h}"));
    }
    if let Some(l) = node.label {
        s.push_str(&format!(":{l}"));
    }
    s.push(']');
    s
}

struct PatternParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl PatternParser<'_> {
    fn err(&self, message: impl Into<String>) -> PatternError {
        PatternError {
            position: self.pos,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.s[start..self.pos]).ok()?.parse().ok()
    }

    fn run(mut self) -> Result<Pattern, PatternError> {
        let mut p = Pattern::new();
        let mut prev: Option<usize> = None;
        let mut pending: Option<BondPredicate> = None;
        let mut stack = Vec::new();
        let mut rings: BTreeMap<u32, (usize, Option<BondPredicate>)> = BTreeMap::new();
        if self.s.is_empty() {
            return Ok(p);
        }
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    if prev.is_none() {
                        return Err(self.err("branch without atom"));
                    }
                    stack.push(prev);
                    self.pos += 1;
                }
                b')' => {
                    prev = stack.pop().ok_or_else(|| self.err("unbalanced ')'"))?;
                    self.pos += 1;
                }
                b'.' => {
                    if !stack.is_empty() || pending.is_some() {
                        return Err(self.err("misplaced '.'"));
                    }
                    prev = None;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'~' => {
                    if pending.is_some() {
                        return Err(self.err("two bond symbols"));
                    }
                    pending = Some(match c {
                        b'-' => BondPredicate::Order(BondOrder::Single),
                        b'=' => BondPredicate::Order(BondOrder::Double),
                        b'#' => BondPredicate::Order(BondOrder::Triple),
                        b':' => BondPredicate::Order(BondOrder::Aromatic),
                        _ => BondPredicate::Any,
                    });
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let atom = prev.ok_or_else(|| self.err("ring bond without atom"))?;
                    let digit = if c == b'%' {
                        self.pos += 1;
                        let start = self.pos;
                        let d = self.number().ok_or_else(|| self.err("expected ring number"))?;
                        if self.pos - start != 2 {
                            return Err(self.err("'%' needs two digits"));
                        }
                        d
                    } else {
                        self.pos += 1;
                        (c - b'0') as u32
                    };
                    match rings.remove(&digit) {
                        None => {
                            rings.insert(digit, (atom, pending.take()));
                        }
                        Some((other, bond)) => {
                            let bond = bond
                                .or(pending.take())
                                .ok_or_else(|| self.err("ring bond needs an explicit bond"))?;
                            if other == atom || p.edge_between(other, atom).is_some() {
                                return Err(self.err("invalid ring closure"));
                            }
                            p.add_edge(other, atom, bond);
                        }
                    }
                }
                b'[' => {
                    let node = self.node()?;
                    let idx = p.add_node(node.predicate, node.label);
                    if let Some(q) = prev {
                        let bond = pending
                            .take()
                            .ok_or_else(|| self.err("bonds must be written explicitly"))?;
                        p.add_edge(q, idx, bond);
                    } else if pending.is_some() {
                        return Err(self.err("bond without preceding atom"));
                    }
                    prev = Some(idx);
                }
                _ => return Err(self.err(format!("unexpected {:?}", c as char))),
            }
        }
        if !stack.is_empty() {
            return Err(self.err("unbalanced '('"));
        }
        if pending.is_some() {
            return Err(self.err("dangling bond"));
        }
        if !rings.is_empty() {
            return Err(self.err("unclosed ring"));
        }
        Ok(p)
    }

    fn node(&mut self) -> Result<PatternNode, PatternError> {
        self.pos += 1;
        let close = self.s[self.pos..]
            .iter()
            .position(|&c| c == b']')
            .map(|k| k + self.pos)
            .ok_or_else(|| self.err("unclosed '['"))?;
        let body = std::str::from_utf8(&self.s[self.pos..close]).map_err(|_| self.err("not UTF-8"))?;
        let (body, label) = match body.rsplit_once(':') {
            Some((b, l)) => (b, Some(l.parse::<u32>().map_err(|_| self.err("bad label"))?)),
            None => (body, None),
        };
        let mut parts = body.split(';');
        let primary = parts.next().unwrap_or("");
        let mut pred = AtomPredicate::any();
        match primary {
            "*" => {}
            "A" => pred.aromatic = Some(false),
            "a" => pred.aromatic = Some(true),
            p if p.starts_with('#') => {
                let z: u8 = p[1..].parse().map_err(|_| self.err("bad atomic number"))?;
                pred.element = Some(Element::from_atomic_number(z).ok_or_else(|| self.err("bad atomic number"))?);
            }
            p if p.starts_with(|c: char| c.is_ascii_lowercase()) => {
                let mut cs = p.chars();
                let cap: String = cs
                    .next()
                    .map(|c| c.to_ascii_uppercase())
                    .into_iter()
                    .chain(cs)
                    .collect();
                pred.element = Some(Element::from_symbol(&cap).ok_or_else(|| self.err("unknown element"))?);
                pred.aromatic = Some(true);
            }
            p => {
                pred.element = Some(Element::from_symbol(p).ok_or_else(|| self.err("unknown element"))?);
                pred.aromatic = Some(false);
            }
        }
        for part in parts {
            let (head, rest) = part.split_at(part.chars().next().map_or(0, char::len_utf8));
            match head {
                "+" | "-" => {
                    let v: i8 = rest.parse().map_err(|_| self.err("bad charge"))?;
                    pred.charge = Some(if head == "-" { -v } else { v });
                }
                "D" => pred.min_degree = Some(rest.parse().map_err(|_| self.err("bad degree"))?),
                "H" => pred.h_count = Some(rest.parse().map_err(|_| self.err("bad H count"))?),
                _ => return Err(self.err(format!("unknown primitive {part:?}"))),
            }
        }
        self.pos = close + 1;
        Ok(PatternNode { predicate: pred, label })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    #[test]
    fn text_round_trip() {
        let texts = [
            "[C;+0;D3;H0:1](=[O;+0;D1;H0:2])-[O;+0;D2;H0:3]",
            "[c]1:[c]:[c]:[c]:[c]:[c]:1",
            "[*]~[#7;-1].[A;H2]",
            "[a;D2]",
        ];
        for t in texts {
            let p = Pattern::parse(t).unwrap();
            let once = p.to_text();
            let twice = Pattern::parse(&once).unwrap().to_text();
            assert_eq!(once, twice, "{t}");
        }
    }

    #[test]
    fn parse_errors() {
        assert!(Pattern::parse("[C][C]").is_err());
        assert!(Pattern::parse("[C]-").is_err());
        assert!(Pattern::parse("[C]1-[C]").is_err());
        assert!(Pattern::parse("[Q]").is_err());
        assert!(Pattern::parse("[C;X1]").is_err());
    }

    #[test]
    fn exact_predicates() {
        let m = parse_smiles("CC(=O)O").unwrap();
        let p = AtomPredicate::exact(&m, 1);
        assert_eq!(p.min_degree, Some(3));
        assert_eq!(p.h_count, Some(0));
        assert!(p.matches(&m, 1));
        assert!(!p.matches(&m, 0));
    }
}
