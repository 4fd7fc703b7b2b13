//! Backtracking subgraph monomorphism search.

use super::mol::MolGraph;
use super::pattern::Pattern;

/// One embedding: `map[node] = atom`.
pub type Embedding = Vec<usize>;

/// All injective maps of pattern nodes to atoms that satisfy every node and
/// edge predicate, in lexicographic order of the atom vectors. Extra bonds in
/// the molecule between mapped atoms are allowed (non-induced matching);
/// stereo marks are ignored.
pub fn match_pattern(p: &Pattern, mol: &MolGraph) -> Vec<Embedding> {
    let mut out = Vec::new();
    for_each_match(p, mol, |e| {
        out.push(e.to_vec());
        true
    });
    out.sort();
    out
}

/// Whether any embedding exists.
pub fn has_match(p: &Pattern, mol: &MolGraph) -> bool {
    let mut found = false;
    for_each_match(p, mol, |_| {
        found = true;
        false
    });
    found
}

/// Calls `visit` for each embedding until it returns false.
pub fn for_each_match(p: &Pattern, mol: &MolGraph, mut visit: impl FnMut(&[usize]) -> bool) {
    let n = p.nodes.len();
    if n == 0 || n > mol.atom_count() {
        return;
    }
    let order = search_order(p);
    let adj = p.adjacency();
    // candidate atoms per node, pre-filtered by node predicate
    let candidates: Vec<Vec<usize>> = (0..n)
        .map(|k| {
            (0..mol.atom_count())
                .filter(|&a| p.nodes[k].predicate.matches(mol, a))
                .collect()
        })
        .collect();
    if candidates.iter().any(Vec::is_empty) {
        return;
    }
    let mut assignment = vec![usize::MAX; n];
    let mut used = vec![false; mol.atom_count()];
    let mut state = Search {
        p,
        mol,
        order: &order,
        adj: &adj,
        candidates: &candidates,
        assignment: &mut assignment,
        used: &mut used,
    };
    state.extend(0, &mut visit);
}

struct Search<'a> {
    p: &'a Pattern,
    mol: &'a MolGraph,
    order: &'a [(usize, Option<usize>)],
    adj: &'a [Vec<(usize, usize)>],
    candidates: &'a [Vec<usize>],
    assignment: &'a mut Vec<usize>,
    used: &'a mut Vec<bool>,
}

impl Search<'_> {
    /// Returns false to abort the whole search.
    fn extend(&mut self, depth: usize, visit: &mut impl FnMut(&[usize]) -> bool) -> bool {
        if depth == self.order.len() {
            return visit(self.assignment);
        }
        let (node, anchor) = self.order[depth];
        let pool: Vec<usize> = match anchor {
            Some(a) => {
                let img = self.assignment[a];
                self.mol.neighbors(img).iter().map(|(v, _)| *v).collect()
            }
            None => self.candidates[node].clone(),
        };
        for atom in pool {
            if self.used[atom] || !self.feasible(node, atom) {
                continue;
            }
            self.assignment[node] = atom;
            self.used[atom] = true;
            let go_on = self.extend(depth + 1, visit);
            self.used[atom] = false;
            self.assignment[node] = usize::MAX;
            if !go_on {
                return false;
            }
        }
        true
    }

    fn feasible(&self, node: usize, atom: usize) -> bool {
        if !self.p.nodes[node].predicate.matches(self.mol, atom) {
            return false;
        }
        for &(other, e) in &self.adj[node] {
            let img = self.assignment[other];
            if img == usize::MAX {
                continue;
            }
            match self.mol.bond_between(atom, img) {
                Some(b) if self.p.edges[e].bond.matches(b.order) => {}
                _ => return false,
            }
        }
        true
    }
}

/// Visit order: each component starts at its most constrained node and grows
/// breadth-first so every later node has an already-placed neighbour.
fn search_order(p: &Pattern) -> Vec<(usize, Option<usize>)> {
    let n = p.nodes.len();
    let adj = p.adjacency();
    let weight = |k: usize| {
        let pr = &p.nodes[k].predicate;
        let fixed = [
            pr.element.is_some(),
            pr.aromatic.is_some(),
            pr.charge.is_some(),
            pr.min_degree.is_some(),
            pr.h_count.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        // rarer elements first: anything but carbon is a strong filter
        let rare = pr.element.is_some_and(|e| e.atomic_number() != 6);
        (usize::from(rare), fixed, adj[k].len())
    };
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let root = (0..n)
            .filter(|&k| !placed[k])
            .max_by(|&a, &b| weight(a).cmp(&weight(b)).then(b.cmp(&a)))
            .expect("unplaced node");
        placed[root] = true;
        order.push((root, None));
        let mut k = order.len() - 1;
        while k < order.len() {
            let (cur, _) = order[k];
            for &(v, _) in &adj[cur] {
                if !placed[v] {
                    placed[v] = true;
                    order.push((v, Some(cur)));
                }
            }
            k += 1;
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::pattern::{AtomPredicate, BondPredicate};
    use crate::chem::{parse_smiles, BondOrder, Element};

    fn carbonyl() -> Pattern {
        let mut p = Pattern::new();
        let c = p.add_node(
            AtomPredicate {
                element: Some(Element::C),
                ..AtomPredicate::any()
            },
            None,
        );
        let o = p.add_node(
            AtomPredicate {
                element: Some(Element::O),
                ..AtomPredicate::any()
            },
            None,
        );
        p.add_edge(c, o, BondPredicate::Order(BondOrder::Double));
        p
    }

    #[test]
    fn carbonyl_in_acetic_acid() {
        let m = parse_smiles("CC(=O)O").unwrap();
        assert_eq!(match_pattern(&carbonyl(), &m), vec![vec![1, 2]]);
    }

    #[test]
    fn no_overlap_is_empty() {
        let mut p = Pattern::new();
        p.add_node(
            AtomPredicate {
                element: Some(Element::N),
                ..AtomPredicate::any()
            },
            None,
        );
        assert!(match_pattern(&p, &parse_smiles("CCC").unwrap()).is_empty());
    }

    #[test]
    fn wildcard_counts_atoms() {
        let mut p = Pattern::new();
        p.add_node(AtomPredicate::any(), None);
        let m = parse_smiles("CC(=O)Nc1ccccc1").unwrap();
        assert_eq!(match_pattern(&p, &m).len(), m.atom_count());
    }

    #[test]
    fn disconnected_pattern_is_injective() {
        let p = Pattern::parse("[C].[C]").unwrap();
        let m = parse_smiles("CC").unwrap();
        assert_eq!(match_pattern(&p, &m), vec![vec![0, 1], vec![1, 0]]);
        assert!(has_match(&p, &m));
        assert!(!has_match(&p, &parse_smiles("C").unwrap()));
    }
}
