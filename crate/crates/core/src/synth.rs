//! Synthetic atom-mapped reaction generator in the dataset's TSV format.
//!
//! Each reaction class has a few mapped core reactions with substituent slots.
//! `{R1}`, `{R2}` take any group, `{A1}` an aryl group. Groups are mapped on
//! both sides, so every product atom has a reactant counterpart; leaving
//! atoms are unmapped. The output mixes in multi-product lines with trivial
//! by-products and reagent fields so the full preprocessing path is exercised.

use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chem::{parse_smiles, write_smiles_in_order, Atom, BondOrder, Element, MolGraph};

/// Substituents attached through an sp3 carbon.
const ALKYL: &[&str] = &[
    "C",
    "CC",
    "CCC",
    "CC(C)C",
    "C1CCCCC1",
    "CCOC",
    "Cc1ccccc1",
    "CCN(C)C",
    "C1CCOCC1",
    "CC#N",
    "CCC(F)(F)F",
    "C1CC1",
    "CCCCC",
];

/// Substituents attached through an aromatic carbon.
const ARYL: &[&str] = &[
    "c1ccccc1",
    "c1ccc(F)cc1",
    "c1ccc(Cl)cc1",
    "c1ccc(OC)cc1",
    "c1cccnc1",
    "c1ccncc1",
    "c1ccc(C)cc1",
    "c1ccc2ccccc2c1",
    "c1cccs1",
    "c1ccc(C(F)(F)F)cc1",
    "c1cc(C)cc(C)c1",
    "c1ccc(C#N)cc1",
];

/// Mapped core reactions per class (index 0 = class 1).
const CORES: [&[&str]; 10] = [
    // heteroatom alkylation and arylation
    &[
        "Br[CH2:1]{R1}.[NH2:2]{R2}>>[CH2:1]({R1})[NH:2]{R2}",
        "I[CH3:1].[OH:2]{A1}>>[CH3:1][O:2]{A1}",
        "F[c:1]1[cH:2][cH:3][c:4]([N+:5](=[O:6])[O-:7])[cH:8][cH:9]1.[NH2:10]{R1}>>[c:1]1([NH:10]{R1})[cH:2][cH:3][c:4]([N+:5](=[O:6])[O-:7])[cH:8][cH:9]1",
    ],
    // acylation and related processes
    &[
        "O[C:1](=[O:2]){R1}.[NH2:3]{R2}>>[C:1](=[O:2])({R1})[NH:3]{R2}",
        "Cl[C:1](=[O:2]){R1}.[NH2:3]{R2}>>[C:1](=[O:2])({R1})[NH:3]{R2}",
        "Cl[S:1](=[O:2])(=[O:3]){A1}.[NH2:4]{R1}>>[S:1](=[O:2])(=[O:3])({A1})[NH:4]{R1}",
    ],
    // C-C bond formation
    &[
        "Br[c:1]1[cH:2][cH:3][c:4]({R1})[cH:5][cH:6]1.OB(O){A1}>>[c:1]1({A1})[cH:2][cH:3][c:4]({R1})[cH:5][cH:6]1",
        "Br[c:1]1[cH:2][cH:3][cH:4][n:5][cH:6]1.OB(O){A1}>>[c:1]1({A1})[cH:2][cH:3][cH:4][n:5][cH:6]1",
        "Br[c:1]1[cH:2][cH:3][c:4]({R1})[cH:5][cH:6]1.[CH:7]#[C:8]{R2}>>[c:1]1([C:7]#[C:8]{R2})[cH:2][cH:3][c:4]({R1})[cH:5][cH:6]1",
    ],
    // heterocycle formation
    &[
        "[CH3:1][C:2](=O)[CH2:3][C:4](=O){R1}.[NH2:5][NH:6]{R2}>>[CH3:1][c:2]1[cH:3][c:4]({R1})[n:6]({R2})[n:5]1",
    ],
    // protections
    &[
        "[CH3:2][C:3]([CH3:4])([CH3:5])[O:6][C:7](=[O:8])OC(=O)OC(C)(C)C.[NH2:1]{R1}>>[CH3:2][C:3]([CH3:4])([CH3:5])[O:6][C:7](=[O:8])[NH:1]{R1}",
        "Cl[C:1](=[O:2])[O:3][CH2:4][c:5]1[cH:6][cH:7][cH:8][cH:9][cH:10]1.[NH2:11]{R1}>>[C:1](=[O:2])([O:3][CH2:4][c:5]1[cH:6][cH:7][cH:8][cH:9][cH:10]1)[NH:11]{R1}",
    ],
    // deprotections
    &[
        "C[O:3][C:1](=[O:2]){R1}>>[OH:3][C:1](=[O:2]){R1}",
        "CC(C)(C)OC(=O)[NH:1]{R1}>>[NH2:1]{R1}",
    ],
    // reductions
    &[
        "[O-][N+:1](=O){A1}>>[NH2:1]{A1}",
        "[CH3:1][C:2](=[O:3]){R1}>>[CH3:1][CH:2]([OH:3]){R1}",
    ],
    // oxidations
    &["[OH:1][CH2:2]{R1}>>[O:1]=[CH:2]{R1}"],
    // functional group interconversion
    &[
        "[N:1]#[C:2]{R1}.[OH2:3]>>[NH2:1][C:2](=[O:3]){R1}",
        "O[C:1](=[O:2]){R1}.O=S(Cl)[Cl:3]>>[Cl:3][C:1](=[O:2]){R1}",
    ],
    // functional group addition
    &[
        "[cH:1]1[cH:2][cH:3][c:4]({R1})[cH:5][cH:6]1.[O-:10][N+:7](=[O:8])O>>[O-:10][N+:7](=[O:8])[c:1]1[cH:2][cH:3][c:4]({R1})[cH:5][cH:6]1",
        "[cH:1]1[cH:2][cH:3][c:4]({R1})[cH:5][cH:6]1.Br[Br:7]>>[Br:7][c:1]1[cH:2][cH:3][c:4]({R1})[cH:5][cH:6]1",
    ],
];

/// Class shares of the reference dataset, in percent.
pub const DATASET_CLASS_WEIGHTS: [f64; 10] = [30.3, 23.8, 11.3, 1.8, 1.3, 16.5, 9.2, 1.6, 3.7, 0.5];

const TRIVIAL_BYPRODUCTS: &[&str] = &["O", "[Na+]", "CO", "Cl", "[Cl-]"];
const REAGENTS: &[&str] = &["C1CCOC1", "CN(C)C=O", "ClCCl", "CCN(CC)CC", "O=C([O-])[O-].[K+].[K+]"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    /// Relative class weights, class 1 first.
    pub class_weights: [f64; 10],
    /// Probability of appending a trivial by-product to the product side.
    pub byproduct_rate: f64,
    /// Probability of filling the reagent field.
    pub reagent_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 1000,
            seed: 0,
            class_weights: [1.0; 10],
            byproduct_rate: 0.15,
            reagent_rate: 0.3,
        }
    }
}

/// One generated line: `(id, class, reaction SMILES)`.
pub type SynthReaction = (String, u8, String);

/// Mapped, attached form of a substituent: the attachment atom is written
/// first with one hydrogen fewer, maps start at `map_base`, ring bond labels
/// are shifted to `%nn` starting at `ring_base + 1`.
fn attached_group(smiles: &str, map_base: u32, ring_base: u32) -> String {
    let mut mol = parse_smiles(smiles).expect("built-in group parses");
    for i in 0..mol.atom_count() {
        let h = mol.total_h(i);
        let a = mol.atom_mut(i);
        a.explicit_h = Some(h);
        a.atom_map = Some(map_base + i as u32);
    }
    let h0 = mol.atom(0).explicit_h.unwrap_or(0);
    mol.atom_mut(0).explicit_h = Some(h0.checked_sub(1).expect("attachment atom has a hydrogen"));
    shift_ring_labels(&write_smiles_in_order(&mol), ring_base)
}

/// Rewrites ring bond digits outside brackets as `%nn` labels.
fn shift_ring_labels(s: &str, base: u32) -> String {
    let mut out = String::with_capacity(s.len() + 8);
    let mut in_bracket = false;
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '[' => in_bracket = true,
            ']' => in_bracket = false,
            _ => {}
        }
        if !in_bracket && c == '%' {
            let d: String = [chars.next(), chars.next()].into_iter().flatten().collect();
            let n: u32 = d.parse().expect("two-digit ring label");
            write!(out, "%{}", base + n).unwrap();
        } else if !in_bracket && c.is_ascii_digit() {
            write!(out, "%{}", base + c.to_digit(10).unwrap()).unwrap();
        } else {
            out.push(c);
        }
    }
    out
}

/// Fills the slots of one core reaction with random groups.
fn instantiate(core: &str, rng: &mut ChaCha8Rng) -> String {
    let mut text = core.to_string();
    for (slot, (name, pool)) in [("{R1}", None), ("{R2}", None), ("{A1}", Some(ARYL))]
        .into_iter()
        .enumerate()
    {
        if !text.contains(name) {
            continue;
        }
        let group = match pool {
            Some(p) => *p.choose(rng).expect("non-empty"),
            None if rng.gen_bool(0.5) => *ALKYL.choose(rng).expect("non-empty"),
            None => *ARYL.choose(rng).expect("non-empty"),
        };
        let slot = slot as u32;
        let g = attached_group(group, 20 * (slot + 1), 10 * (slot + 1));
        text = text.replace(name, &format!("-{g}"));
    }
    text
}

/// Generates `cfg.count` reactions; identical configs give identical output.
pub fn generate(cfg: &SynthConfig) -> Vec<SynthReaction> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = WeightedIndex::new(cfg.class_weights).expect("positive class weights");
    (0..cfg.count)
        .map(|k| {
            let klass = weights.sample(&mut rng) + 1;
            let core = CORES[klass - 1].choose(&mut rng).expect("non-empty");
            let rxn = instantiate(core, &mut rng);
            let (reactants, mut product) = rxn.split_once(">>").expect("core has '>>'");
            let reagents = if rng.gen_bool(cfg.reagent_rate) {
                REAGENTS.choose(&mut rng).expect("non-empty").to_string()
            } else {
                String::new()
            };
            let with_extra;
            if rng.gen_bool(cfg.byproduct_rate) {
                with_extra = format!("{product}.{}", TRIVIAL_BYPRODUCTS.choose(&mut rng).expect("non-empty"));
                product = &with_extra;
            }
            (
                format!("syn{k:05}"),
                klass as u8,
                format!("{reactants}>{reagents}>{product}"),
            )
        })
        .collect()
}

/// TSV text with a header line.
pub fn to_tsv(reactions: &[SynthReaction]) -> String {
    let mut s = String::from("id\tclass\treaction_smiles\n");
    for (id, klass, rxn) in reactions {
        writeln!(s, "{id}\t{klass}\t{rxn}").unwrap();
    }
    s
}

const RING_SEEDS: &[&str] = &["c1ccccc1", "c1ccncc1", "c1ccoc1", "C1CCCC1", "c1cc[nH]c1"];

/// Random valid molecule with at most `max_heavy` heavy atoms: either a chain
/// grown atom by atom or a ring seed with substituents, plus an optional
/// extra ring bond. Every atom stays within its lowest standard valence, so
/// the result passes strict valence checks.
pub fn random_molecule<R: Rng>(rng: &mut R, max_heavy: usize) -> MolGraph {
    let max_heavy = max_heavy.max(1);
    let mut mol = if max_heavy >= 6 && rng.gen_bool(0.3) {
        parse_smiles(RING_SEEDS.choose(rng).expect("non-empty")).expect("ring seed parses")
    } else {
        let mut m = MolGraph::new();
        m.add_atom(Atom::new(random_element(rng)));
        m
    };
    let target = rng.gen_range(mol.atom_count()..=max_heavy);
    while mol.atom_count() < target {
        let open: Vec<usize> = (0..mol.atom_count()).filter(|&i| free_valence(&mol, i) > 0).collect();
        let Some(&j) = open.choose(rng) else { break };
        let e = random_element(rng);
        let cap = free_valence(&mol, j).min(e.valences()[0]);
        let order = random_order(rng, cap);
        let i = mol.add_atom(Atom::new(e));
        mol.add_bond(j, i, order).expect("new atom");
    }
    if mol.atom_count() >= 4 && rng.gen_bool(0.3) {
        let n = mol.atom_count();
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b
            && mol.bond_between(a, b).is_none()
            && free_valence(&mol, a) > 0
            && free_valence(&mol, b) > 0
            && !mol.atom(a).aromatic
            && !mol.atom(b).aromatic
        {
            mol.add_bond(a, b, BondOrder::Single).expect("checked");
        }
    }
    if rng.gen_bool(0.1) {
        let os: Vec<usize> = (0..mol.atom_count())
            .filter(|&i| mol.atom(i).element == Element::O && mol.degree(i) == 1 && mol.total_h(i) == 1)
            .collect();
        if let Some(&o) = os.choose(rng) {
            mol.atom_mut(o).charge = -1;
            mol.atom_mut(o).explicit_h = Some(0);
        }
    }
    mol
}

fn random_element<R: Rng>(rng: &mut R) -> Element {
    const POOL: [Element; 10] = [
        Element::C,
        Element::C,
        Element::C,
        Element::C,
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::F,
        Element::CL,
    ];
    *POOL.choose(rng).expect("non-empty")
}

fn random_order<R: Rng>(rng: &mut R, cap: u8) -> BondOrder {
    let roll: f64 = rng.gen();
    if cap >= 3 && roll < 0.08 {
        BondOrder::Triple
    } else if cap >= 2 && roll < 0.25 {
        BondOrder::Double
    } else {
        BondOrder::Single
    }
}

fn free_valence(mol: &MolGraph, i: usize) -> u8 {
    let a = mol.atom(i);
    if a.charge != 0 || a.explicit_h.is_some() && !a.aromatic {
        return 0;
    }
    if a.aromatic {
        // only ring atoms that still carry an implicit hydrogen
        return u8::from(mol.total_h(i) > 0 && a.explicit_h.is_none());
    }
    let lowest = a.element.valences()[0];
    lowest.saturating_sub(mol.bond_valence_sum(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::ParseOptions;
    use crate::data::parse_reaction;

    #[test]
    fn attached_groups() {
        assert_eq!(attached_group("C", 20, 10), "[CH3:20]");
        let ph = attached_group("c1ccccc1", 40, 20);
        assert!(ph.starts_with("[c:40]%21"), "{ph}");
        assert_eq!(shift_ring_labels("C1CC[NH2+]C1", 10), "C%11CC[NH2+]C%11");
    }

    #[test]
    fn every_core_parses_with_every_group() {
        for (k, cores) in CORES.iter().enumerate() {
            for core in *cores {
                for seed in 0..8 {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let rxn = instantiate(core, &mut rng);
                    let (r, p) = rxn.split_once(">>").unwrap();
                    let text = format!("{r}>>{p}");
                    parse_reaction("x", k as u8 + 1, &text, ParseOptions::default())
                        .unwrap_or_else(|e| panic!("{text}: {e}"));
                }
            }
        }
    }

    #[test]
    fn random_molecules_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let m = random_molecule(&mut rng, 8);
            assert!(m.atom_count() >= 1 && m.heavy_atom_count() <= 8);
            assert!((0..m.atom_count()).all(|i| m.valence_violation(i).is_none()));
            let text = crate::chem::canonical_smiles(&m);
            let back = parse_smiles(&text).unwrap_or_else(|e| panic!("{text}: {e}"));
            assert_eq!(crate::chem::canonical_smiles(&back), text);
        }
    }

    #[test]
    fn deterministic_and_labelled() {
        let cfg = SynthConfig {
            count: 50,
            seed: 3,
            ..SynthConfig::default()
        };
        let a = generate(&cfg);
        assert_eq!(a, generate(&cfg));
        assert_eq!(a.len(), 50);
        assert!(a.iter().all(|(_, k, _)| (1..=10).contains(k)));
        assert_eq!(to_tsv(&a).lines().count(), 51);
    }
}
