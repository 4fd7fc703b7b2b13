//! SMILES reading and writing.
//!
//! Supported subset: organic-subset atoms written bare (`B C N O P S F Cl Br I`
//! and aromatic `b c n o p s`), every other atom in brackets with optional
//! isotope, `@`/`@@`, hydrogen count, charge and atom map; bonds `- = # : / \`;
//! branches; ring closures `0-9` and `%nn`; `.` component separators.
//! Aromaticity is taken as written.

use std::collections::BTreeMap;

use log::warn;
use thiserror::Error;

use super::element::Element;
use super::mol::{permutation_is_odd, Atom, BondDirection, BondOrder, Chirality, GraphError, Ligand, MolGraph};
use super::traverse::{plan_traversal, Plan, Step};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesErrorKind {
    #[error("empty input")]
    Empty,
    #[error("unexpected character {0:?}")]
    UnexpectedChar(char),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unknown element {0:?}")]
    UnknownElement(String),
    #[error("element {0} cannot be aromatic")]
    BadAromatic(String),
    #[error("unbalanced parenthesis")]
    UnbalancedParen,
    #[error("unclosed bracket atom")]
    UnclosedBracket,
    #[error("ring bond {0} was never closed")]
    UnclosedRing(u32),
    #[error("ring closure bonds disagree")]
    RingBondMismatch,
    #[error("invalid charge")]
    InvalidCharge,
    #[error("bond symbol without a following atom")]
    DanglingBond,
    #[error("atom {atom} has valence {used}, more than the allowed {allowed}")]
    Valence { atom: usize, used: u8, allowed: u8 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A SMILES string could not be read.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("SMILES syntax error at byte {position}: {kind}")]
pub struct SmilesError {
    pub position: usize,
    pub kind: SmilesErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    /// Reject atoms above their maximum valence; when false they are logged and kept.
    pub strict_valence: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { strict_valence: true }
    }
}

impl ParseOptions {
    pub fn lenient() -> Self {
        ParseOptions { strict_valence: false }
    }
}

/// Parses with strict valence checking.
pub fn parse_smiles(text: &str) -> Result<MolGraph, SmilesError> {
    parse_smiles_with(text, ParseOptions::default())
}

pub fn parse_smiles_with(text: &str, opts: ParseOptions) -> Result<MolGraph, SmilesError> {
    Parser::new(text.as_bytes()).run(opts)
}

#[derive(Clone, Copy)]
struct BondSpec {
    order: Option<BondOrder>,
    direction: Option<BondDirection>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Known(Ligand),
    PendingRing(u32),
}

struct OpenRing {
    atom: usize,
    bond: Option<BondSpec>,
    at: usize,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    mol: MolGraph,
    // written ligand order per atom, for chirality
    written: Vec<Vec<Slot>>,
    rings: BTreeMap<u32, OpenRing>,
}

impl<'a> Parser<'a> {
    fn new(s: &'a [u8]) -> Self {
        Parser {
            s,
            pos: 0,
            mol: MolGraph::new(),
            written: Vec::new(),
            rings: BTreeMap::new(),
        }
    }

    fn err(&self, kind: SmilesErrorKind) -> SmilesError {
        SmilesError {
            position: self.pos,
            kind,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn run(mut self, opts: ParseOptions) -> Result<MolGraph, SmilesError> {
        if self.s.is_empty() {
            return Err(self.err(SmilesErrorKind::Empty));
        }
        let mut prev: Option<usize> = None;
        let mut pending: Option<BondSpec> = None;
        let mut stack: Vec<Option<usize>> = Vec::new();
        let mut fresh_component = true;

        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    if prev.is_none() || pending.is_some() {
                        return Err(self.err(SmilesErrorKind::UnexpectedChar('(')));
                    }
                    stack.push(prev);
                    self.pos += 1;
                }
                b')' => {
                    if pending.is_some() {
                        return Err(self.err(SmilesErrorKind::DanglingBond));
                    }
                    prev = stack.pop().ok_or_else(|| self.err(SmilesErrorKind::UnbalancedParen))?;
                    self.pos += 1;
                }
                b'.' => {
                    if pending.is_some() {
                        return Err(self.err(SmilesErrorKind::DanglingBond));
                    }
                    if !stack.is_empty() {
                        return Err(self.err(SmilesErrorKind::UnbalancedParen));
                    }
                    if prev.is_none() {
                        return Err(self.err(SmilesErrorKind::UnexpectedChar('.')));
                    }
                    prev = None;
                    fresh_component = true;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if pending.is_some() || prev.is_none() {
                        return Err(self.err(SmilesErrorKind::UnexpectedChar(c as char)));
                    }
                    pending = Some(bond_symbol(c));
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let Some(atom) = prev else {
                        return Err(self.err(SmilesErrorKind::UnexpectedChar(c as char)));
                    };
                    let at = self.pos;
                    let digit = self.ring_number()?;
                    self.ring_bond(atom, digit, pending.take(), at)?;
                }
                _ => {
                    if prev.is_none() && !fresh_component && stack.is_empty() {
                        return Err(self.err(SmilesErrorKind::UnexpectedChar(c as char)));
                    }
                    let at = self.pos;
                    let atom = self.atom()?;
                    let hydrogen_slot = self.mol.atom(atom).explicit_h == Some(1);
                    if let Some(p) = prev {
                        let spec = pending.take();
                        self.connect(p, atom, spec, at)?;
                        self.written[p].push(Slot::Known(Ligand::Atom(atom)));
                        self.written[atom].push(Slot::Known(Ligand::Atom(p)));
                    }
                    if hydrogen_slot {
                        self.written[atom].push(Slot::Known(Ligand::Hydrogen));
                    }
                    prev = Some(atom);
                    fresh_component = false;
                }
            }
        }
        if pending.is_some() {
            return Err(self.err(SmilesErrorKind::DanglingBond));
        }
        if !stack.is_empty() {
            return Err(self.err(SmilesErrorKind::UnbalancedParen));
        }
        if let Some((&digit, ring)) = self.rings.iter().next() {
            return Err(SmilesError {
                position: ring.at,
                kind: SmilesErrorKind::UnclosedRing(digit),
            });
        }
        if self.mol.is_empty() {
            return Err(self.err(SmilesErrorKind::Empty));
        }
        self.finish_chirality();
        for i in 0..self.mol.atom_count() {
            if let Some((used, allowed)) = self.mol.valence_violation(i) {
                if opts.strict_valence {
                    return Err(self.err(SmilesErrorKind::Valence { atom: i, used, allowed }));
                }
                warn!(
                    "atom {i} ({}) has valence {used} > {allowed}; accepted in lenient mode",
                    self.mol.atom(i).element
                );
            }
        }
        Ok(self.mol)
    }

    fn connect(&mut self, from: usize, to: usize, spec: Option<BondSpec>, at: usize) -> Result<(), SmilesError> {
        let both_aromatic = self.mol.atom(from).aromatic && self.mol.atom(to).aromatic;
        let order = spec.and_then(|s| s.order).unwrap_or(if both_aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        });
        let direction = spec.and_then(|s| s.direction);
        self.mol
            .add_bond_directed(from, to, order, direction)
            .map_err(|e| SmilesError {
                position: at,
                kind: e.into(),
            })?;
        Ok(())
    }

    fn ring_number(&mut self) -> Result<u32, SmilesError> {
        let c = self.peek().ok_or_else(|| self.err(SmilesErrorKind::UnexpectedEnd))?;
        if c == b'%' {
            self.pos += 1;
            let d1 = self.peek().filter(u8::is_ascii_digit);
            let d2 = self.s.get(self.pos + 1).copied().filter(u8::is_ascii_digit);
            match (d1, d2) {
                (Some(a), Some(b)) => {
                    self.pos += 2;
                    Ok(((a - b'0') * 10 + (b - b'0')) as u32)
                }
                _ => Err(self.err(SmilesErrorKind::UnexpectedChar('%'))),
            }
        } else {
            self.pos += 1;
            Ok((c - b'0') as u32)
        }
    }

    fn ring_bond(&mut self, atom: usize, digit: u32, spec: Option<BondSpec>, at: usize) -> Result<(), SmilesError> {
        match self.rings.remove(&digit) {
            None => {
                self.rings.insert(digit, OpenRing { atom, bond: spec, at });
                self.written[atom].push(Slot::PendingRing(digit));
            }
            Some(open) => {
                let order = match (open.bond.and_then(|b| b.order), spec.and_then(|b| b.order)) {
                    (Some(a), Some(b)) if a != b => return Err(self.err(SmilesErrorKind::RingBondMismatch)),
                    (a, b) => a.or(b),
                };
                // direction at the opening reads opener -> closer, at the closing closer -> opener
                let direction = open
                    .bond
                    .and_then(|b| b.direction)
                    .or_else(|| spec.and_then(|b| b.direction).map(BondDirection::reversed));
                let merged = BondSpec { order, direction };
                self.connect(open.atom, atom, Some(merged), at)?;
                let slot = self.written[open.atom]
                    .iter_mut()
                    .find(|s| **s == Slot::PendingRing(digit))
                    .expect("ring slot recorded at opening");
                *slot = Slot::Known(Ligand::Atom(atom));
                self.written[atom].push(Slot::Known(Ligand::Atom(open.atom)));
            }
        }
        Ok(())
    }

    fn atom(&mut self) -> Result<usize, SmilesError> {
        let c = self.peek().ok_or_else(|| self.err(SmilesErrorKind::UnexpectedEnd))?;
        let atom = if c == b'[' {
            self.bracket_atom()?
        } else {
            self.organic_atom()?
        };
        self.written.push(Vec::new());
        Ok(self.mol.add_atom(atom))
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let rest = &self.s[self.pos..];
        let (sym, aromatic, len) = match rest {
            [b'C', b'l', ..] => ("Cl", false, 2),
            [b'B', b'r', ..] => ("Br", false, 2),
            [b'B', ..] => ("B", false, 1),
            [b'C', ..] => ("C", false, 1),
            [b'N', ..] => ("N", false, 1),
            [b'O', ..] => ("O", false, 1),
            [b'P', ..] => ("P", false, 1),
            [b'S', ..] => ("S", false, 1),
            [b'F', ..] => ("F", false, 1),
            [b'I', ..] => ("I", false, 1),
            [b'b', ..] => ("B", true, 1),
            [b'c', ..] => ("C", true, 1),
            [b'n', ..] => ("N", true, 1),
            [b'o', ..] => ("O", true, 1),
            [b'p', ..] => ("P", true, 1),
            [b's', ..] => ("S", true, 1),
            [c, ..] if c.is_ascii_alphabetic() => {
                return Err(self.err(SmilesErrorKind::UnknownElement((*c as char).to_string())))
            }
            [c, ..] => return Err(self.err(SmilesErrorKind::UnexpectedChar(*c as char))),
            [] => return Err(self.err(SmilesErrorKind::UnexpectedEnd)),
        };
        self.pos += len;
        let element = Element::from_symbol(sym).expect("organic subset symbol");
        Ok(if aromatic {
            Atom::aromatic(element)
        } else {
            Atom::new(element)
        })
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return None;
        }
        std::str::from_utf8(&self.s[start..self.pos])
            .ok()
            .and_then(|t| t.parse().ok())
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        let close = self.s[open..]
            .iter()
            .position(|&c| c == b']')
            .map(|p| p + open)
            .ok_or(SmilesError {
                position: open,
                kind: SmilesErrorKind::UnclosedBracket,
            })?;
        let isotope = match self.number() {
            Some(n) => Some(u16::try_from(n).map_err(|_| self.err(SmilesErrorKind::UnexpectedChar('0')))?),
            None => None,
        };
        let (element, aromatic) = self.bracket_symbol(close)?;
        let mut atom = if aromatic {
            Atom::aromatic(element)
        } else {
            Atom::new(element)
        };
        atom.isotope = isotope;
        if self.peek() == Some(b'@') {
            self.pos += 1;
            atom.chirality = Some(if self.peek() == Some(b'@') {
                self.pos += 1;
                Chirality::Clockwise
            } else {
                Chirality::CounterClockwise
            });
        }
        atom.explicit_h = Some(0);
        if self.peek() == Some(b'H') {
            self.pos += 1;
            let n = self.number().unwrap_or(1);
            atom.explicit_h = Some(n.min(u8::MAX as u32) as u8);
        }
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let mut magnitude: i32 = 1;
            if let Some(n) = self.number() {
                magnitude = n as i32;
            } else {
                while self.peek() == Some(sign) {
                    magnitude += 1;
                    self.pos += 1;
                }
            }
            if magnitude > 15 {
                return Err(self.err(SmilesErrorKind::InvalidCharge));
            }
            atom.charge = if sign == b'+' { magnitude } else { -magnitude } as i8;
        }
        if self.peek() == Some(b':') {
            self.pos += 1;
            let n = self
                .number()
                .ok_or_else(|| self.err(SmilesErrorKind::UnexpectedChar(':')))?;
            atom.atom_map = (n > 0).then_some(n);
        }
        if self.pos != close {
            let c = self.s[self.pos] as char;
            return Err(self.err(if matches!(c, '+' | '-') {
                SmilesErrorKind::InvalidCharge
            } else {
                SmilesErrorKind::UnexpectedChar(c)
            }));
        }
        self.pos = close + 1;
        Ok(atom)
    }

    fn bracket_symbol(&mut self, close: usize) -> Result<(Element, bool), SmilesError> {
        let body = &self.s[self.pos..close];
        let take = |n: usize| std::str::from_utf8(&body[..n.min(body.len())]).unwrap_or("");
        if body.is_empty() {
            return Err(self.err(SmilesErrorKind::UnexpectedChar(']')));
        }
        if body[0].is_ascii_lowercase() {
            for n in [2, 1] {
                if body.len() < n {
                    continue;
                }
                let sym = take(n);
                let mut chars = sym.chars();
                let cap: String = chars
                    .next()
                    .map(|c| c.to_ascii_uppercase())
                    .into_iter()
                    .chain(chars)
                    .collect();
                if let Some(e) = Element::from_symbol(&cap) {
                    if n == 2 && !matches!(sym, "se" | "as" | "te") {
                        continue;
                    }
                    if !e.can_be_aromatic() {
                        return Err(self.err(SmilesErrorKind::BadAromatic(sym.to_string())));
                    }
                    self.pos += n;
                    return Ok((e, true));
                }
            }
            return Err(self.err(SmilesErrorKind::UnknownElement(take(1).to_string())));
        }
        if body[0].is_ascii_uppercase() {
            if body.len() >= 2 && body[1].is_ascii_lowercase() {
                if let Some(e) = Element::from_symbol(take(2)) {
                    self.pos += 2;
                    return Ok((e, false));
                }
            }
            if let Some(e) = Element::from_symbol(take(1)) {
                self.pos += 1;
                return Ok((e, false));
            }
        }
        let end = body
            .iter()
            .position(|c| !c.is_ascii_alphabetic())
            .unwrap_or(body.len())
            .max(1);
        Err(self.err(SmilesErrorKind::UnknownElement(take(end).to_string())))
    }

    /// Converts tags from written ligand order to the stored reference order.
    fn finish_chirality(&mut self) {
        for i in 0..self.mol.atom_count() {
            let Some(tag) = self.mol.atom(i).chirality else {
                continue;
            };
            let written: Vec<Ligand> = self.written[i]
                .iter()
                .filter_map(|s| match s {
                    Slot::Known(l) => Some(*l),
                    Slot::PendingRing(_) => None,
                })
                .collect();
            let reference = self.mol.reference_ligands(i);
            let fixed = (written.len() == reference.len() && written.len() >= 3)
                .then(|| tag.flip_if(permutation_is_odd(&written, &reference)));
            self.mol.atom_mut(i).chirality = fixed;
        }
    }
}

fn bond_symbol(c: u8) -> BondSpec {
    let (order, direction) = match c {
        b'-' => (BondOrder::Single, None),
        b'=' => (BondOrder::Double, None),
        b'#' => (BondOrder::Triple, None),
        b':' => (BondOrder::Aromatic, None),
        b'/' => (BondOrder::Single, Some(BondDirection::Up)),
        b'\\' => (BondOrder::Single, Some(BondDirection::Down)),
        _ => unreachable!("caller matched a bond symbol"),
    };
    BondSpec {
        order: Some(order),
        direction,
    }
}

/// Writes `mol` as SMILES, visiting atoms in ascending `ranks` order (lower
/// rank first). Each component starts at its lowest-ranked atom; components
/// are emitted in order of that atom's rank.
pub fn write_smiles(mol: &MolGraph, ranks: &[usize]) -> String {
    let adjacency: Vec<Vec<(usize, usize)>> = (0..mol.atom_count()).map(|i| mol.neighbors(i).to_vec()).collect();
    let plan = plan_traversal(&adjacency, ranks);
    let normalized = normalize_directions(mol, &plan);
    let mol = normalized.as_ref().unwrap_or(mol);
    let mut out = String::new();
    for step in &plan.steps {
        match step {
            Step::Dot => out.push('.'),
            Step::Open => out.push('('),
            Step::Close => out.push(')'),
            Step::Atom { atom, parent, rings } => {
                if let Some((p, bond)) = parent {
                    out.push_str(&bond_text(mol, *bond, *p));
                }
                out.push_str(&atom_text(
                    mol,
                    *atom,
                    &plan.ligand_order(*atom, mol.total_h(*atom) == 1),
                ));
                for r in rings {
                    if r.opening {
                        out.push_str(&bond_text(mol, r.bond, *atom));
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

/// Directional bonds flanking the same double bond form one system; flipping
/// every mark of a system leaves all cis/trans relations intact. Returns a
/// copy in which each system's first written mark is `/`, or `None` when no
/// flip is needed.
fn normalize_directions(mol: &MolGraph, plan: &Plan) -> Option<MolGraph> {
    let nb = mol.bond_count();
    let directed: Vec<bool> = mol.bonds().iter().map(|b| b.direction.is_some()).collect();
    if !directed.iter().any(|&d| d) {
        return None;
    }
    let mut parent: Vec<usize> = (0..nb).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        let mut y = x;
        while parent[y] != r {
            let next = parent[y];
            parent[y] = r;
            y = next;
        }
        r
    }
    for db in mol.bonds().iter().filter(|b| b.order == BondOrder::Double) {
        let flank: Vec<usize> = [db.a, db.b]
            .iter()
            .flat_map(|&end| mol.neighbors(end).iter().map(|&(_, k)| k))
            .filter(|&k| directed[k])
            .collect();
        for w in flank.windows(2) {
            let (x, y) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[x] = y;
        }
    }
    let mut decided = vec![false; nb];
    let mut flip = vec![false; nb];
    let mut note = |bond: usize, from: usize, parent: &mut Vec<usize>| {
        if !directed[bond] {
            return;
        }
        let root = find(parent, bond);
        if !decided[root] {
            decided[root] = true;
            flip[root] = mol.bond(bond).direction_from(from) == Some(BondDirection::Down);
        }
    };
    for step in &plan.steps {
        if let Step::Atom {
            atom,
            parent: up,
            rings,
        } = step
        {
            if let Some((p, bond)) = up {
                note(*bond, *p, &mut parent);
            }
            for r in rings.iter().filter(|r| r.opening) {
                note(r.bond, *atom, &mut parent);
            }
        }
    }
    let roots: Vec<usize> = (0..nb).map(|k| find(&mut parent, k)).collect();
    if !(0..nb).any(|k| directed[k] && flip[roots[k]]) {
        return None;
    }
    let mut out = mol.clone();
    for k in 0..nb {
        if directed[k] && flip[roots[k]] {
            let d = mol.bond(k).direction.map(BondDirection::reversed);
            out.set_bond_direction(k, d);
        }
    }
    Some(out)
}

/// Writes using input atom order.
pub fn write_smiles_in_order(mol: &MolGraph) -> String {
    let ranks: Vec<usize> = (0..mol.atom_count()).collect();
    write_smiles(mol, &ranks)
}

fn bond_text(mol: &MolGraph, bond: usize, from: usize) -> String {
    let b = mol.bond(bond);
    let to = b.other(from);
    let both_aromatic = mol.atom(from).aromatic && mol.atom(to).aromatic;
    match (b.order, b.direction_from(from)) {
        (BondOrder::Single, Some(BondDirection::Up)) => "/".into(),
        (BondOrder::Single, Some(BondDirection::Down)) => "\\".into(),
        (BondOrder::Single, None) if both_aromatic => "-".into(),
        (BondOrder::Single, None) => String::new(),
        (BondOrder::Double, _) => "=".into(),
        (BondOrder::Triple, _) => "#".into(),
        (BondOrder::Aromatic, _) if both_aromatic => String::new(),
        (BondOrder::Aromatic, _) => ":".into(),
    }
}

fn atom_text(mol: &MolGraph, i: usize, written: &[Ligand]) -> String {
    let a = mol.atom(i);
    let symbol = if a.aromatic {
        a.element.symbol().to_ascii_lowercase()
    } else {
        a.element.symbol().to_string()
    };
    let h = mol.total_h(i);
    let bare = a.element.is_organic_subset()
        && a.charge == 0
        && a.isotope.is_none()
        && a.chirality.is_none()
        && a.atom_map.is_none()
        && (!a.aromatic || a.element.can_be_aromatic())
        && mol.implicit_h(i) == h;
    if bare {
        return symbol;
    }
    let mut s = String::from("[");
    if let Some(iso) = a.isotope {
        s.push_str(&iso.to_string());
    }
    s.push_str(&symbol);
    if let Some(tag) = a.chirality {
        let reference = mol.reference_ligands(i);
        let tag = if written.len() == reference.len() {
            tag.flip_if(permutation_is_odd(written, &reference))
        } else {
            tag
        };
        s.push_str(match tag {
            Chirality::CounterClockwise => "@",
            Chirality::Clockwise => "@@",
        });
    }
    match h {
        0 => {}
        1 => s.push('H'),
        n => s.push_str(&format!("H{n}")),
    }
    match a.charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    if let Some(m) = a.atom_map {
        s.push_str(&format!(":{m}"));
    }
    s.push(']');
    s
}
