use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::element::Element;

/// Tetrahedral tag as written in SMILES: `@` is counterclockwise, `@@` clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Chirality {
    CounterClockwise,
    Clockwise,
}

impl Chirality {
    pub fn flipped(self) -> Self {
        match self {
            Chirality::CounterClockwise => Chirality::Clockwise,
            Chirality::Clockwise => Chirality::CounterClockwise,
        }
    }

    pub(crate) fn flip_if(self, odd: bool) -> Self {
        if odd {
            self.flipped()
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub charge: i8,
    pub aromatic: bool,
    /// Hydrogen count given inside brackets. `None` means "derive from valence".
    pub explicit_h: Option<u8>,
    pub atom_map: Option<u32>,
    /// Stored relative to the reference neighbour order: the implicit hydrogen
    /// first (if any), then bonded atoms by ascending index.
    pub chirality: Option<Chirality>,
    pub isotope: Option<u16>,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom {
            element,
            charge: 0,
            aromatic: false,
            explicit_h: None,
            atom_map: None,
            chirality: None,
            isotope: None,
        }
    }

    pub fn aromatic(element: Element) -> Self {
        Atom {
            aromatic: true,
            ..Atom::new(element)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the valence sum. Aromatic bonds count as one; the
    /// aromatic atom itself adds one more for its share of the pi system.
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

/// Cis/trans marker on a single bond, read from the first to the second endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BondDirection {
    Up,
    Down,
}

impl BondDirection {
    pub fn reversed(self) -> Self {
        match self {
            BondDirection::Up => BondDirection::Down,
            BondDirection::Down => BondDirection::Up,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub direction: Option<BondDirection>,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }

    /// Direction as seen when walking from `from` to the other endpoint.
    pub fn direction_from(&self, from: usize) -> Option<BondDirection> {
        self.direction.map(|d| if from == self.a { d } else { d.reversed() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("bond endpoint {0} out of range")]
    BadIndex(usize),
    #[error("self-loop on atom {0}")]
    SelfLoop(usize),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
}

/// Neighbour key used when reasoning about tetrahedral parity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Ligand {
    Hydrogen,
    Atom(usize),
}

/// An attributed molecular graph. Atoms keep their input order; hydrogens are
/// implicit (counted, not stored as vertices).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawGraph", into = "RawGraph")]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
}

impl From<RawGraph> for MolGraph {
    fn from(raw: RawGraph) -> Self {
        let mut g = MolGraph::new();
        for a in raw.atoms {
            g.add_atom(a);
        }
        for b in raw.bonds {
            // tolerate malformed payloads by dropping offending bonds
            let _ = g.add_bond_directed(b.a, b.b, b.order, b.direction);
        }
        g
    }
}

impl From<MolGraph> for RawGraph {
    fn from(g: MolGraph) -> Self {
        RawGraph {
            atoms: g.atoms,
            bonds: g.bonds,
        }
    }
}

impl MolGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn atom_mut(&mut self, i: usize) -> &mut Atom {
        &mut self.atoms[i]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn bond(&self, i: usize) -> &Bond {
        &self.bonds[i]
    }

    /// `(neighbour, bond index)` pairs in insertion order.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn bond_between(&self, i: usize, j: usize) -> Option<&Bond> {
        self.adjacency[i]
            .iter()
            .find(|(n, _)| *n == j)
            .map(|(_, b)| &self.bonds[*b])
    }

    pub fn add_atom(&mut self, atom: Atom) -> usize {
        self.atoms.push(atom);
        self.adjacency.push(Vec::new());
        self.atoms.len() - 1
    }

    pub fn add_bond(&mut self, a: usize, b: usize, order: BondOrder) -> Result<usize, GraphError> {
        self.add_bond_directed(a, b, order, None)
    }

    pub fn add_bond_directed(
        &mut self,
        a: usize,
        b: usize,
        order: BondOrder,
        direction: Option<BondDirection>,
    ) -> Result<usize, GraphError> {
        let n = self.atoms.len();
        if a >= n {
            return Err(GraphError::BadIndex(a));
        }
        if b >= n {
            return Err(GraphError::BadIndex(b));
        }
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        if self.bond_between(a, b).is_some() {
            return Err(GraphError::DuplicateBond(a, b));
        }
        self.bonds.push(Bond { a, b, order, direction });
        let id = self.bonds.len() - 1;
        self.adjacency[a].push((b, id));
        self.adjacency[b].push((a, id));
        Ok(id)
    }

    pub(crate) fn set_bond_direction(&mut self, bond: usize, direction: Option<BondDirection>) {
        self.bonds[bond].direction = direction;
    }

    /// Sum of bond valences, plus one for aromatic atoms.
    pub fn bond_valence_sum(&self, i: usize) -> u8 {
        let s: u8 = self.adjacency[i]
            .iter()
            .map(|(_, b)| self.bonds[*b].order.valence())
            .sum();
        s + u8::from(self.atoms[i].aromatic)
    }

    /// Hydrogens an atom would carry if written bare (organic subset, no brackets).
    pub fn implicit_h(&self, i: usize) -> u8 {
        let atom = &self.atoms[i];
        if atom.charge != 0 {
            return 0;
        }
        let valences = atom.element.valences();
        let Some(&lowest) = valences.first() else {
            return 0;
        };
        let used = self.bond_valence_sum(i);
        if atom.aromatic {
            return lowest.saturating_sub(used);
        }
        valences.iter().find(|&&v| v >= used).map(|v| v - used).unwrap_or(0)
    }

    /// Total attached hydrogens: the bracket count if given, else the implicit count.
    pub fn total_h(&self, i: usize) -> u8 {
        self.atoms[i].explicit_h.unwrap_or_else(|| self.implicit_h(i))
    }

    /// Number of heavy-atom neighbours.
    pub fn heavy_degree(&self, i: usize) -> usize {
        self.adjacency[i]
            .iter()
            .filter(|(n, _)| self.atoms[*n].element != Element::H)
            .count()
    }

    /// Returns `Some((used, allowed))` when the atom exceeds its maximum valence.
    pub fn valence_violation(&self, i: usize) -> Option<(u8, u8)> {
        let atom = &self.atoms[i];
        let valences = atom.element.charged_valences(atom.charge);
        let &max = valences.last()?;
        let used = self.bond_valence_sum(i) + self.total_h(i);
        // aromatic carbon and boron spend one valence on the pi system already
        // counted in bond_valence_sum; heteroatoms may donate a lone pair instead
        let allowed = if atom.aromatic && !matches!(atom.element, Element::C | Element::B) {
            max + 1
        } else {
            max
        };
        (used > allowed).then_some((used, allowed))
    }

    /// Clears bracket hydrogen counts that a bare atom would reproduce.
    pub fn normalize_hydrogens(&mut self) {
        for i in 0..self.atoms.len() {
            let a = &self.atoms[i];
            let Some(h) = a.explicit_h else { continue };
            let bare_ok = a.element.is_organic_subset()
                && a.charge == 0
                && a.isotope.is_none()
                && a.chirality.is_none()
                && a.atom_map.is_none()
                && (!a.aromatic || a.element.can_be_aromatic());
            if bare_ok && self.implicit_h(i) == h {
                self.atoms[i].explicit_h = None;
            }
        }
    }

    /// Ligands around `i` in the reference order chirality tags are stored against.
    pub(crate) fn reference_ligands(&self, i: usize) -> Vec<Ligand> {
        let mut out = Vec::with_capacity(4);
        if self.total_h(i) == 1 {
            out.push(Ligand::Hydrogen);
        }
        let mut nbrs: Vec<usize> = self.adjacency[i].iter().map(|(n, _)| *n).collect();
        nbrs.sort_unstable();
        out.extend(nbrs.into_iter().map(Ligand::Atom));
        out
    }

    /// Connected components as sorted atom index lists, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut k = 0;
            while k < comp.len() {
                let cur = comp[k];
                for &(nb, _) in &self.adjacency[cur] {
                    if !seen[nb] {
                        seen[nb] = true;
                        comp.push(nb);
                    }
                }
                k += 1;
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Induced subgraph on `atoms` (in the given order). Chirality tags are
    /// re-expressed for the new indices; stereo atoms that lose a neighbour
    /// drop their tag.
    pub fn subgraph(&self, atoms: &[usize]) -> MolGraph {
        let mut index = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in atoms.iter().enumerate() {
            index[old] = new;
        }
        let mut g = MolGraph::new();
        for &old in atoms {
            g.add_atom(self.atoms[old].clone());
        }
        for b in &self.bonds {
            let (na, nb) = (index[b.a], index[b.b]);
            if na != usize::MAX && nb != usize::MAX {
                g.add_bond_directed(na, nb, b.order, b.direction)
                    .expect("induced subgraph of a simple graph is simple");
            }
        }
        for (new, &old) in atoms.iter().enumerate() {
            if self.atoms[old].chirality.is_some() {
                g.atoms[new].chirality =
                    transfer_chirality(self, old, &g, new, |o| (index[o] != usize::MAX).then_some(index[o]));
            }
        }
        g
    }

    /// Splits into one graph per connected component.
    pub fn split_components(&self) -> Vec<MolGraph> {
        self.components().into_iter().map(|c| self.subgraph(&c)).collect()
    }

    /// Disjoint union; returns the graph and the atom offset of each part.
    pub fn union(parts: &[MolGraph]) -> (MolGraph, Vec<usize>) {
        let mut g = MolGraph::new();
        let mut offsets = Vec::with_capacity(parts.len());
        for p in parts {
            let off = g.atoms.len();
            offsets.push(off);
            for a in &p.atoms {
                g.add_atom(a.clone());
            }
            for b in &p.bonds {
                g.add_bond_directed(b.a + off, b.b + off, b.order, b.direction)
                    .expect("disjoint union of simple graphs is simple");
            }
        }
        (g, offsets)
    }

    /// Relabels atoms: atom `i` moves to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut order = vec![0; perm.len()];
        for (old, &new) in perm.iter().enumerate() {
            order[new] = old;
        }
        self.subgraph(&order)
    }

    pub fn has_atom_maps(&self) -> bool {
        self.atoms.iter().any(|a| a.atom_map.is_some())
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.element != Element::H).count()
    }
}

/// Copy of `mol` with every atom map cleared and bracket hydrogens that became
/// redundant folded back into implicit counts.
pub fn strip_atom_maps(mol: &MolGraph) -> MolGraph {
    let mut out = mol.clone();
    for a in &mut out.atoms {
        a.atom_map = None;
    }
    out.normalize_hydrogens();
    out
}

/// Parity (true = odd) of the permutation taking `from` to `to`. Both slices
/// must hold the same elements.
pub(crate) fn permutation_is_odd(from: &[Ligand], to: &[Ligand]) -> bool {
    let mut idx: Vec<usize> = from
        .iter()
        .map(|l| to.iter().position(|m| m == l).expect("same ligand set"))
        .collect();
    let mut odd = false;
    for i in 0..idx.len() {
        while idx[i] != i {
            let j = idx[i];
            idx.swap(i, j);
            odd = !odd;
        }
    }
    odd
}

/// Re-expresses the chirality of `src_atom` in `src` for `dst_atom` in `dst`,
/// given a map from source atom indices to destination indices. Returns `None`
/// when the ligand sets do not correspond one-to-one.
pub(crate) fn transfer_chirality(
    src: &MolGraph,
    src_atom: usize,
    dst: &MolGraph,
    dst_atom: usize,
    map: impl Fn(usize) -> Option<usize>,
) -> Option<Chirality> {
    let tag = src.atoms[src_atom].chirality?;
    let src_ref = src.reference_ligands(src_atom);
    let dst_ref = dst.reference_ligands(dst_atom);
    if src_ref.len() != dst_ref.len() || src_ref.len() < 3 {
        return None;
    }
    let mapped: Option<Vec<Ligand>> = src_ref
        .iter()
        .map(|l| match l {
            Ligand::Hydrogen => Some(Ligand::Hydrogen),
            Ligand::Atom(o) => map(*o).map(Ligand::Atom),
        })
        .collect();
    let mapped = mapped?;
    if !mapped.iter().all(|l| dst_ref.contains(l)) {
        return None;
    }
    Some(tag.flip_if(permutation_is_odd(&mapped, &dst_ref)))
}

impl fmt::Display for MolGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::canon::canonical_smiles(self))
    }
}
