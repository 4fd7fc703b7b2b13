//! Molecular graphs: SMILES parsing and writing, canonical ordering and
//! substructure patterns.

mod canon;
mod element;
mod matcher;
mod mol;
mod pattern;
mod smiles;
mod traverse;

pub use canon::{canonical_ranks, canonical_smiles, canonical_smiles_opts, refine_ranks};
pub use element::Element;
pub use matcher::{for_each_match, has_match, match_pattern, Embedding};
pub use mol::{strip_atom_maps, Atom, Bond, BondDirection, BondOrder, Chirality, GraphError, MolGraph};
pub use pattern::{AtomPredicate, BondPredicate, Pattern, PatternEdge, PatternError, PatternNode};
pub use smiles::{
    parse_smiles, parse_smiles_with, write_smiles, write_smiles_in_order, ParseOptions, SmilesError, SmilesErrorKind,
};

pub(crate) use mol::transfer_chirality;
