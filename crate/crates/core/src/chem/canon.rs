//! Canonical atom ranking by iterative neighbourhood refinement with
//! deterministic tie-breaking.

use super::mol::{permutation_is_odd, Chirality, Ligand, MolGraph};
use super::smiles::write_smiles;

/// Ranks the vertices of a coloured graph. `keys` are the initial vertex
/// colours, `adjacency[i]` lists `(neighbour, edge colour)`. Returns a
/// permutation: `ranks[i]` is the position of vertex `i`.
///
/// Refinement repeatedly replaces each class with (class, sorted neighbour
/// classes and edge colours) until the partition stops splitting. Remaining
/// ties are broken by promoting one member of the lowest tied class and
/// refining again.
pub fn refine_ranks<K: Ord>(keys: &[K], adjacency: &[Vec<(usize, u8)>]) -> Vec<usize> {
    let n = keys.len();
    if n == 0 {
        return Vec::new();
    }
    let mut classes = refined_classes(keys, adjacency);
    while let Some(tied) = lowest_tied_class(&classes) {
        let pick = (0..n).find(|&i| classes[i] == tied).expect("tied member");
        promote(&mut classes, tied, pick, adjacency);
    }
    classes
}

/// Every ranking reachable by choosing any member of each tied class, stopping
/// once `limit` rankings have been produced.
pub(crate) fn all_tie_breaks<K: Ord>(keys: &[K], adjacency: &[Vec<(usize, u8)>], limit: usize) -> Vec<Vec<usize>> {
    fn go(classes: Vec<usize>, adjacency: &[Vec<(usize, u8)>], limit: usize, out: &mut Vec<Vec<usize>>) {
        let Some(tied) = lowest_tied_class(&classes) else {
            out.push(classes);
            return;
        };
        for pick in (0..classes.len()).filter(|&i| classes[i] == tied) {
            if out.len() >= limit {
                return;
            }
            let mut next = classes.clone();
            promote(&mut next, tied, pick, adjacency);
            go(next, adjacency, limit, out);
        }
    }
    let mut out = Vec::new();
    if !keys.is_empty() {
        go(refined_classes(keys, adjacency), adjacency, limit.max(1), &mut out);
    }
    out
}

/// Lowest class value shared by more than one vertex.
fn lowest_tied_class(classes: &[usize]) -> Option<usize> {
    let mut sorted = classes.to_vec();
    sorted.sort_unstable();
    sorted.windows(2).find(|w| w[0] == w[1]).map(|w| w[0])
}

/// Places `pick` ahead of the other members of class `tied` and refines.
fn promote(classes: &mut Vec<usize>, tied: usize, pick: usize, adjacency: &[Vec<(usize, u8)>]) {
    // classes are "number of vertices strictly before"; doubling leaves
    // room to place the promoted vertex ahead of its peers
    for cl in classes.iter_mut() {
        *cl *= 2;
    }
    for (i, cl) in classes.iter_mut().enumerate() {
        if *cl == tied * 2 && i != pick {
            *cl += 1;
        }
    }
    renumber(classes);
    refine(classes, adjacency);
}

fn refined_classes<K: Ord>(keys: &[K], adjacency: &[Vec<(usize, u8)>]) -> Vec<usize> {
    let n = keys.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut classes = vec![0usize; n];
    let mut c = 0;
    for w in 0..n {
        if w > 0 && keys[order[w]] != keys[order[w - 1]] {
            c = w;
        }
        classes[order[w]] = c;
    }
    refine(&mut classes, adjacency);
    classes
}

fn count_distinct(classes: &[usize]) -> usize {
    let mut s = classes.to_vec();
    s.sort_unstable();
    s.dedup();
    s.len()
}

/// Maps class values to "number of vertices with a strictly smaller class".
fn renumber(classes: &mut [usize]) {
    let mut sorted = classes.to_vec();
    sorted.sort_unstable();
    for c in classes.iter_mut() {
        *c = sorted.partition_point(|&x| x < *c);
    }
}

fn refine(classes: &mut Vec<usize>, adjacency: &[Vec<(usize, u8)>]) {
    let n = classes.len();
    let mut distinct = count_distinct(classes);
    loop {
        let signatures: Vec<(usize, Vec<(usize, u8)>)> = (0..n)
            .map(|i| {
                let mut nb: Vec<(usize, u8)> = adjacency[i].iter().map(|&(j, colour)| (classes[j], colour)).collect();
                nb.sort_unstable();
                (classes[i], nb)
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| signatures[a].cmp(&signatures[b]));
        let mut next = vec![0usize; n];
        let mut c = 0;
        for w in 0..n {
            if w > 0 && signatures[order[w]] != signatures[order[w - 1]] {
                c = w;
            }
            next[order[w]] = c;
        }
        let nd = count_distinct(&next);
        *classes = next;
        if nd == distinct {
            break;
        }
        distinct = nd;
    }
}

/// Per-atom invariant tuple used as the starting colour.
pub(crate) fn atom_invariant(mol: &MolGraph, i: usize, with_maps: bool) -> (u8, u16, i8, usize, u8, bool, u32) {
    let a = mol.atom(i);
    (
        a.element.atomic_number(),
        a.isotope.unwrap_or(0),
        a.charge,
        mol.degree(i),
        mol.total_h(i),
        a.aromatic,
        if with_maps { a.atom_map.unwrap_or(0) } else { 0 },
    )
}

fn bond_adjacency(mol: &MolGraph) -> Vec<Vec<(usize, u8)>> {
    (0..mol.atom_count())
        .map(|i| {
            mol.neighbors(i)
                .iter()
                .map(|&(j, b)| (j, mol.bond(b).order.code()))
                .collect()
        })
        .collect()
}

/// Canonical total order of atoms (`ranks[i]` = position of atom `i`). Atom
/// maps are ignored.
pub fn canonical_ranks(mol: &MolGraph) -> Vec<usize> {
    ranks_with(mol, false)
}

/// Upper bound on the tie-break orderings tried for a stereo-bearing component.
const STEREO_BRANCH_LIMIT: usize = 512;

fn ranks_with(mol: &MolGraph, with_maps: bool) -> Vec<usize> {
    let (keys, adjacency) = stereo_keys(mol, with_maps);
    refine_ranks(&keys, &adjacency)
}

type StereoKey = ((u8, u16, i8, usize, u8, bool, u32), u8);

fn stereo_keys(mol: &MolGraph, with_maps: bool) -> (Vec<StereoKey>, Vec<Vec<(usize, u8)>>) {
    let keys: Vec<_> = (0..mol.atom_count())
        .map(|i| atom_invariant(mol, i, with_maps))
        .collect();
    let adjacency = bond_adjacency(mol);
    let classes = refined_classes(&keys, &adjacency);
    let keys = keys
        .into_iter()
        .enumerate()
        .map(|(i, k)| (k, local_parity(mol, i, &classes)))
        .collect();
    (keys, adjacency)
}

fn has_stereo(mol: &MolGraph) -> bool {
    (0..mol.atom_count()).any(|i| mol.atom(i).chirality.is_some()) || mol.bonds().iter().any(|b| b.direction.is_some())
}

/// Canonical text of one connected molecule. Without stereo the first
/// tie-break ordering is used; with stereo the written strings of all
/// orderings (up to a limit) are compared and the smallest kept, since
/// handedness is only fixed once the traversal order is.
fn canonical_component(mol: &MolGraph, with_maps: bool) -> String {
    let (keys, adjacency) = stereo_keys(mol, with_maps);
    if !has_stereo(mol) {
        return write_smiles(mol, &refine_ranks(&keys, &adjacency));
    }
    all_tie_breaks(&keys, &adjacency, STEREO_BRANCH_LIMIT)
        .into_iter()
        .map(|ranks| write_smiles(mol, &ranks))
        .min()
        .expect("at least one ordering")
}

/// Handedness of atom `i` with ligands ordered by class: 0 when the atom has
/// no tag or two ligands share a class, otherwise 1 or 2.
fn local_parity(mol: &MolGraph, i: usize, classes: &[usize]) -> u8 {
    let Some(tag) = mol.atom(i).chirality else {
        return 0;
    };
    let reference = mol.reference_ligands(i);
    let mut sorted = reference.clone();
    let class_of = |l: &Ligand| match l {
        Ligand::Hydrogen => None,
        Ligand::Atom(j) => Some(classes[*j]),
    };
    sorted.sort_by_key(class_of);
    if sorted.windows(2).any(|w| class_of(&w[0]) == class_of(&w[1])) {
        return 0;
    }
    match tag.flip_if(permutation_is_odd(&reference, &sorted)) {
        Chirality::CounterClockwise => 1,
        Chirality::Clockwise => 2,
    }
}

/// Canonical SMILES with atom maps removed from the output.
pub fn canonical_smiles(mol: &MolGraph) -> String {
    canonical_smiles_opts(mol, false)
}

/// Canonical SMILES. With `keep_maps` the atom maps are written and take part
/// in ranking. Components are canonicalized independently and joined in
/// lexicographic order.
pub fn canonical_smiles_opts(mol: &MolGraph, keep_maps: bool) -> String {
    let source = if keep_maps {
        mol.clone()
    } else {
        super::mol::strip_atom_maps(mol)
    };
    let mut parts: Vec<String> = source
        .components()
        .into_iter()
        .map(|atoms| canonical_component(&source.subgraph(&atoms), keep_maps))
        .collect();
    parts.sort();
    parts.join(".")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    #[test]
    fn permutation_invariant_strings() {
        let a = parse_smiles("OCC").unwrap();
        let b = parse_smiles("CCO").unwrap();
        assert_eq!(canonical_smiles(&a), canonical_smiles(&b));
        let x = parse_smiles("c1ccccc1C(=O)O").unwrap();
        let y = parse_smiles("OC(=O)c1ccccc1").unwrap();
        assert_eq!(canonical_smiles(&x), canonical_smiles(&y));
    }

    #[test]
    fn benzene_ties_before_tie_break() {
        let m = parse_smiles("c1ccccc1").unwrap();
        let keys: Vec<_> = (0..6).map(|i| atom_invariant(&m, i, false)).collect();
        let mut classes: Vec<usize> = vec![0; 6];
        assert!(keys.windows(2).all(|w| w[0] == w[1]));
        refine(&mut classes, &bond_adjacency(&m));
        assert!(classes.iter().all(|&c| c == 0));
        let ranks = canonical_ranks(&m);
        let mut sorted = ranks.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn components_sorted_lexicographically() {
        let m = parse_smiles("O.CC.N").unwrap();
        let s = canonical_smiles(&m);
        let parts: Vec<&str> = s.split('.').collect();
        let mut sorted = parts.clone();
        sorted.sort();
        assert_eq!(parts, sorted);
        assert_eq!(s, "CC.N.O");
    }

    #[test]
    fn maps_optional() {
        let m = parse_smiles("[CH3:2][OH:1]").unwrap();
        assert_eq!(canonical_smiles(&m), canonical_smiles(&parse_smiles("CO").unwrap()));
        let kept = canonical_smiles_opts(&m, true);
        assert!(kept.contains(":1]") && kept.contains(":2]"));
    }
}
