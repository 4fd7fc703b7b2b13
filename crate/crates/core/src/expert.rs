//! Rule-based baseline: apply every rule of the requested class and rank the
//! pooled reactant sets by rule occurrence count.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::chem::{strip_atom_maps, MolGraph};
use crate::eval::Candidate;
use crate::templates::RuleBase;
pub use crate::templates::{apply_template, RetroTemplate};

/// Ranked candidates for `target`, at most `n`.
///
/// A reactant set produced by several rules is scored with the largest
/// count; the reported rule is the lexicographically first among those with
/// that count. Order: count descending, then reactant text.
pub fn predict_baseline(rb: &RuleBase, target: &MolGraph, klass: u8, n: usize) -> Vec<Candidate> {
    if n == 0 {
        return Vec::new();
    }
    let target = strip_atom_maps(target);
    let rules: Vec<_> = rb.rules_for_class(klass).collect();
    let produced: Vec<(usize, &str, Vec<String>)> = rules
        .par_iter()
        .map(|r| {
            (
                r.count_for(klass),
                r.template.text.as_str(),
                apply_template(&r.template, &target),
            )
        })
        .collect();
    let mut pool: BTreeMap<String, (usize, &str)> = BTreeMap::new();
    for (count, text, sets) in produced {
        for s in sets {
            let e = pool.entry(s).or_insert((count, text));
            if count > e.0 || (count == e.0 && text < e.1) {
                *e = (count, text);
            }
        }
    }
    let mut ranked: Vec<(String, usize, &str)> = pool.into_iter().map(|(s, (c, t))| (s, c, t)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(k, (reactants, count, rule))| Candidate {
            rank: k + 1,
            reactants,
            rule: Some(rule.to_string()),
            count: Some(count),
            log_prob: None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{parse_smiles, ParseOptions};
    use crate::data::parse_reaction;
    use crate::templates::build_rulebase;

    fn rulebase(rxns: &[(&str, u8)]) -> RuleBase {
        let recs: Vec<_> = rxns
            .iter()
            .enumerate()
            .map(|(i, (t, k))| parse_reaction(&format!("r{i}"), *k, t, ParseOptions::default()).unwrap())
            .collect();
        build_rulebase(&recs).0
    }

    const ESTER: &str = "[CH3:1][C:2](=[O:3])[OH:7].[OH:4][CH2:5][CH3:6]>>[CH3:1][C:2](=[O:3])[O:4][CH2:5][CH3:6]";
    const AMIDE: &str = "[CH3:1][C:2](=[O:3])Cl.[NH2:4][CH2:5][CH3:6]>>[CH3:1][C:2](=[O:3])[NH:4][CH2:5][CH3:6]";

    #[test]
    fn class_filter_and_ranking() {
        let rb = rulebase(&[(ESTER, 2), (ESTER, 2), (AMIDE, 2), (AMIDE, 1)]);
        assert_eq!(rb.len(), 2);
        let target = parse_smiles("CC(=O)OCC").unwrap();
        let c = predict_baseline(&rb, &target, 2, 10);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].reactants, "CC(=O)O.CCO");
        assert_eq!(c[0].count, Some(2));
        assert!(predict_baseline(&rb, &target, 1, 10).is_empty());
        assert!(predict_baseline(&rb, &target, 2, 0).is_empty());
        let amide = parse_smiles("CC(=O)NCC").unwrap();
        let c1 = predict_baseline(&rb, &amide, 1, 5);
        assert_eq!(c1[0].reactants, "CC(=O)Cl.CCN");
    }

    #[test]
    fn prefix_property() {
        let rb = rulebase(&[(ESTER, 2), (AMIDE, 2)]);
        let target = parse_smiles("CC(=O)OCCC(C)COC(C)=O").unwrap();
        let all = predict_baseline(&rb, &target, 2, 50);
        assert_eq!(all.len(), 2);
        for n in 0..=all.len() {
            assert_eq!(predict_baseline(&rb, &target, 2, n), all[..n]);
        }
    }
}
