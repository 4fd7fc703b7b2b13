//! Acceptance criteria 1-9. Prints one PASS/FAIL/SKIP line per criterion and
//! exits nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::ops::ControlFlow;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retroseq_cli::commands::{self, ModelKind, SPLITS};
use retroseq_cli::config::RunConfig;
use retroseq_core::chem::{
    canonical_smiles, match_pattern, parse_smiles_with, BondPredicate, MolGraph, ParseOptions, Pattern,
};
use retroseq_core::data::{
    build_vocab, class_counts, filter_trivial, load_reactions, load_reactions_from_str, read_jsonl, split_multiproduct,
    tokenize_records, ProcessedRecord, ReactionRecord, TrivialFilter,
};
use retroseq_core::eval::{
    max_accuracy, rank_histogram, score, top_n_accuracy, Candidate, Example, MetricsReport, PredictionRecord,
};
use retroseq_core::synth::{generate, random_molecule, to_tsv, SynthConfig};
use retroseq_core::templates::{apply_template, build_rulebase, extract_validated, validate_template, RuleOutcome};
use retroseq_neural::optim::loss_and_grads;
use retroseq_neural::{
    beam_decode, fit, greedy_decode, init_model, init_params, sequence_loss, FitOptions, Pair, Seq2SeqConfig,
    Seq2SeqParams, StepStats,
};

// tolerances and budgets
const C1_MOLECULES: usize = 1000;
const C1_PERMUTATIONS: usize = 10;
const C2_MOLECULES: usize = 200;
const C2_PATTERNS: usize = 20;
const C3_MIN_REACTIONS: usize = 500;
const C4_FD_EPS: f64 = 1e-4;
const C4_MAX_REL_ERR: f64 = 1e-4;
const C5_LOGP_TOL: f64 = 1e-9;
/// Every sequence the search can hold at once with vocab 5 and length 6: 31
/// frozen plus 32 live prefixes times three emittable tokens.
const C5_FULL_WIDTH: usize = 127;
const C6_PAIRS: usize = 50;
const C6_MAX_STEPS: u64 = 5000;
const C6_CHECK_EVERY: u64 = 250;
const C6_WINDOW: usize = 500;
/// Windows compared for the monotone-loss condition.
const C6_EARLY_STEPS: usize = 2000;
const C7_MAX_NORM: f64 = 5.0;
/// Relative slack for the f32 rescaling in clipping.
const C7_NORM_SLACK: f64 = 1e-6;
const C7_ATTENTION_TOL: f64 = 1e-6;
const C9_ACCURACY_TOL: f64 = 3.0;

const MINUTE: Duration = Duration::from_secs(60);

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

fn pass(cond: bool, detail: String) -> Outcome {
    Outcome {
        pass: Some(cond),
        detail,
    }
}

fn report(id: usize, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    if let (Some(limit), Some(true)) = (budget, o.pass) {
        if took > limit {
            o.pass = Some(false);
            o.detail = format!("{} (over the {}s budget)", o.detail, limit.as_secs());
        }
    }
    let tag = match o.pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    println!("{tag} C{id} {name}: {} [{:.1}s]", o.detail, took.as_secs_f64());
    o.pass != Some(false)
}

fn lenient() -> ParseOptions {
    ParseOptions::lenient()
}

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn dataset_path() -> Option<PathBuf> {
    let p = std::env::var_os("RETROSEQ_DATASET")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/uspto50k.tsv"));
    p.is_file().then_some(p)
}

fn synth_reactions(count: usize, seed: u64, uniform: bool) -> Vec<ReactionRecord> {
    let mut cfg = SynthConfig {
        count,
        seed,
        ..SynthConfig::default()
    };
    if !uniform {
        cfg.class_weights = retroseq_core::synth::DATASET_CLASS_WEIGHTS;
    }
    let rep = load_reactions_from_str(&to_tsv(&generate(&cfg)), lenient());
    assert!(rep.errors.is_empty(), "{:?}", rep.errors);
    let singles: Vec<_> = rep.records.iter().flat_map(split_multiproduct).collect();
    filter_trivial(singles, &TrivialFilter::default()).0
}

// ---------------------------------------------------------------- C1

fn corpus_molecules(n: usize) -> (Vec<MolGraph>, &'static str) {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut push = |m: MolGraph, out: &mut Vec<MolGraph>| {
        let m = retroseq_core::chem::strip_atom_maps(&m);
        if seen.insert(canonical_smiles(&m)) {
            out.push(m);
        }
    };
    let (records, source) = match dataset_path() {
        Some(p) => (
            load_reactions(&p, lenient()).map(|r| r.records).unwrap_or_default(),
            "dataset",
        ),
        None => (synth_reactions(3000, 1, false), "synthetic corpus"),
    };
    for r in &records {
        for m in r
            .reactants
            .iter()
            .chain([&r.product])
            .flat_map(|m| m.split_components())
        {
            if out.len() < n {
                push(m, &mut out);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    while out.len() < n {
        push(random_molecule(&mut rng, 24), &mut out);
    }
    (out, source)
}

fn c1() -> Outcome {
    let (mols, source) = corpus_molecules(C1_MOLECULES);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut invariant, mut idempotent) = (0, 0);
    let mut first_bad = None;
    for m in &mols {
        let c = canonical_smiles(m);
        let mut ok = true;
        for _ in 0..C1_PERMUTATIONS {
            let mut perm: Vec<usize> = (0..m.atom_count()).collect();
            perm.shuffle(&mut rng);
            ok &= canonical_smiles(&m.permuted(&perm)) == c;
        }
        invariant += ok as usize;
        let again = parse_smiles_with(&c, lenient()).map(|b| canonical_smiles(&b));
        let idem = again.as_ref() == Ok(&c);
        idempotent += idem as usize;
        if (!ok || !idem) && first_bad.is_none() {
            first_bad = Some(c.clone());
        }
    }
    let n = mols.len();
    pass(
        invariant == n && idempotent == n,
        format!(
            "{n} molecules from the {source} x {C1_PERMUTATIONS} permutations: invariant {invariant}/{n}, idempotent {idempotent}/{n}{}",
            first_bad.map(|s| format!(", first failure {s}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- C2

fn brute_force(p: &Pattern, m: &MolGraph) -> Vec<Vec<usize>> {
    fn go(p: &Pattern, m: &MolGraph, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == p.len() {
            let ok = p.edges.iter().all(|e| {
                m.bond_between(cur[e.a], cur[e.b])
                    .is_some_and(|b| e.bond.matches(b.order))
            });
            if ok {
                out.push(cur.clone());
            }
            return;
        }
        for a in 0..m.atom_count() {
            if !cur.contains(&a) && p.nodes[cur.len()].predicate.matches(m, a) {
                cur.push(a);
                go(p, m, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(p, m, &mut Vec::new(), &mut out);
    out.sort();
    out
}

fn random_pattern(m: &MolGraph, rng: &mut ChaCha8Rng, size: usize) -> Pattern {
    let mut atoms = vec![rng.gen_range(0..m.atom_count())];
    while atoms.len() < size {
        let frontier: Vec<usize> = atoms
            .iter()
            .flat_map(|&a| m.neighbors(a).iter().map(|(n, _)| *n))
            .filter(|n| !atoms.contains(n))
            .collect();
        let Some(&n) = frontier.choose(rng) else { break };
        atoms.push(n);
    }
    let mut p = Pattern::from_atoms(m, &atoms, |_| None);
    for node in &mut p.nodes {
        let pr = &mut node.predicate;
        if rng.gen_bool(0.4) {
            pr.h_count = None;
        }
        if rng.gen_bool(0.4) {
            pr.min_degree = None;
        }
        if rng.gen_bool(0.2) {
            pr.element = None;
        }
        if rng.gen_bool(0.3) {
            pr.charge = None;
        }
    }
    for e in &mut p.edges {
        if rng.gen_bool(0.2) {
            e.bond = BondPredicate::Any;
        }
    }
    p
}

fn c2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mols = Vec::new();
    while mols.len() < C2_MOLECULES {
        let m = random_molecule(&mut rng, 8);
        if m.heavy_atom_count() <= 8 {
            mols.push(m);
        }
    }
    // half the patterns come from SMARTS-style text, half from fixture fragments
    let mut patterns: Vec<Pattern> = [
        "[#6]",
        "[#8;H1]",
        "[#6]=[#8]",
        "[#6]-[#7]",
        "[#6]~[#6]",
        "[#7;+0]",
        "[c]:[c]",
        "[#6]-[#8]-[#6]",
        "[*]-[#17]",
        "[#6](=[#8])-[#8]",
    ]
    .iter()
    .filter_map(|t| Pattern::parse(t).ok())
    .collect();
    let parsed = patterns.len();
    while patterns.len() < C2_PATTERNS {
        let donor = &mols[rng.gen_range(0..mols.len())];
        let size = rng.gen_range(1..=5);
        patterns.push(random_pattern(donor, &mut rng, size));
    }
    let (mut agree, mut embeddings) = (0, 0);
    for p in &patterns {
        for m in &mols {
            let fast = match_pattern(p, m);
            embeddings += fast.len();
            agree += (fast == brute_force(p, m)) as usize;
        }
    }
    let total = patterns.len() * mols.len();
    pass(
        agree == total && parsed == 10,
        format!(
            "{} molecules x {} patterns ({parsed} parsed from text): {agree}/{total} pairs agree, {embeddings} embeddings",
            mols.len(),
            patterns.len()
        ),
    )
}

// ---------------------------------------------------------------- C3

fn c3() -> Outcome {
    let records = synth_reactions(600, 3, true);
    let classes: BTreeSet<u8> = records.iter().map(|r| r.klass).collect();
    let (rb, stats) = build_rulebase(&records);
    let (mut admitted, mut admitted_ok) = (0, 0);
    for rule in rb.rules() {
        for id in &rule.provenance_ids {
            let r = records.iter().find(|r| &r.id == id).expect("provenance id");
            admitted += 1;
            admitted_ok += validate_template(&rule.template, r) as usize;
        }
    }
    let (mut validated, mut recovered) = (0, 0);
    for r in &records {
        if let RuleOutcome::Valid(t) = extract_validated(r) {
            validated += 1;
            let target = parse_smiles_with(&r.product_smiles(), lenient()).expect("canonical product");
            recovered += apply_template(&t, &target).contains(&r.reactants_smiles()) as usize;
        }
    }
    let ok = records.len() >= C3_MIN_REACTIONS
        && classes.len() == 10
        && admitted > 0
        && admitted_ok == admitted
        && validated == stats.valid
        && recovered == validated;
    pass(
        ok,
        format!(
            "{} reactions over {} classes; {} unique rules; admitted valid {admitted_ok}/{admitted}; self-application {recovered}/{validated}; coverage {:.1}%",
            records.len(),
            classes.len(),
            rb.len(),
            100.0 * stats.coverage
        ),
    )
}

// ---------------------------------------------------------------- C4

fn c4() -> Outcome {
    let cfg = Seq2SeqConfig {
        vocab_size: 12,
        embedding_dim: 6,
        hidden_dim: 8,
        encoder_layers: 2,
        decoder_layers: 2,
        attention_dim: 5,
        max_seq_len: 5,
        max_decode_len: 5,
        rng_seed: 4,
        ..Seq2SeqConfig::default()
    };
    let mut p = init_params(&cfg).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for t in &mut p.tensors {
        t.mapv_inplace(|x| x + rng.gen_range(-0.5..0.5));
    }
    let batch: [(&[u32], &[u32]); 3] = [
        (&[4, 5, 6, 7, 11], &[9, 4, 10, 3]),
        (&[6], &[5, 5, 7, 8, 3]),
        (&[9, 8], &[3]),
    ];
    let analytic = loss_and_grads(&p, &batch, None).grads;
    let mut q = p.clone();
    let mut worst = (String::new(), 0.0f64);
    for (i, name) in p.layout.names.iter().enumerate() {
        let cols = p.tensors[i].ncols();
        let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
        for k in 0..p.tensors[i].len() {
            let ix = (k / cols, k % cols);
            let x = p.tensors[i][ix];
            q.tensors[i][ix] = x + C4_FD_EPS;
            let up = loss_and_grads(&q, &batch, None).loss;
            q.tensors[i][ix] = x - C4_FD_EPS;
            let down = loss_and_grads(&q, &batch, None).loss;
            q.tensors[i][ix] = x;
            let fd = (up - down) / (2.0 * C4_FD_EPS);
            let g = analytic[i][ix];
            diff += (g - fd).powi(2);
            na += g * g;
            nf += fd * fd;
        }
        let denom = na.sqrt().max(nf.sqrt());
        let rel = if denom == 0.0 { 0.0 } else { diff.sqrt() / denom };
        if rel >= worst.1 {
            worst = (name.clone(), rel);
        }
    }
    pass(
        worst.1 <= C4_MAX_REL_ERR,
        format!(
            "{} tensors, {} weights; worst relative error {:.2e} ({})",
            p.tensors.len(),
            p.n_weights(),
            worst.1,
            worst.0
        ),
    )
}

// ---------------------------------------------------------------- C5

fn c5() -> Outcome {
    const EOS: u32 = 3;
    let cfg = Seq2SeqConfig {
        vocab_size: 5,
        embedding_dim: 6,
        hidden_dim: 6,
        encoder_layers: 1,
        decoder_layers: 2,
        attention_dim: 5,
        max_seq_len: 6,
        max_decode_len: 6,
        batch_size: 4,
        learning_rate: 1e-2,
        rng_seed: 5,
        ..Seq2SeqConfig::default()
    };
    let (p, mut opt) = init_model(&cfg).unwrap();
    let data: Vec<Pair> = [vec![1, 4], vec![4, 4, 1], vec![1], vec![4, 1, 1, 4]]
        .into_iter()
        .map(|s| {
            let mut t: Vec<u32> = s.iter().rev().copied().collect();
            t.push(EOS);
            (s, t)
        })
        .collect();
    let opts = FitOptions {
        max_steps: 40,
        eval_interval: 0,
        patience: 1,
    };
    let p = fit(p, &mut opt, &data, &[], &opts, |_, _| ControlFlow::Continue(()))
        .unwrap()
        .last
        .cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut source = || -> Vec<u32> {
        let len = rng.gen_range(1..=5);
        (0..len).map(|_| if rng.gen_bool(0.5) { 1 } else { 4 }).collect()
    };

    let (mut exact, mut checked, mut enumerated) = (0, 0, 0);
    for _ in 0..10 {
        let src = source();
        let mut all: Vec<(Vec<u32>, f64)> = Vec::new();
        let mut prefixes: Vec<Vec<u32>> = vec![vec![]];
        for _ in 0..cfg.max_decode_len {
            let mut next = Vec::new();
            for pre in &prefixes {
                let mut seq = pre.clone();
                seq.push(EOS);
                let lp = -sequence_loss(&p, &src, &seq) * seq.len() as f64;
                all.push((seq, lp));
                for t in [1u32, 4] {
                    let mut q = pre.clone();
                    q.push(t);
                    next.push(q);
                }
            }
            prefixes = next;
        }
        all.sort_by(|a, b| b.1.total_cmp(&a.1));
        enumerated = all.len();
        for width in [C5_FULL_WIDTH, 2 * C5_FULL_WIDTH] {
            let beam = beam_decode(&p, &src, width);
            checked += 1;
            let same = beam.len() == all.len()
                && beam
                    .iter()
                    .zip(&all)
                    .all(|(h, (s, lp))| h.complete && &h.tokens == s && (h.log_prob - lp).abs() < C5_LOGP_TOL);
            exact += same as usize;
        }
    }
    let mut greedy_ok = 0;
    for _ in 0..100 {
        let src = source();
        let b = beam_decode(&p, &src, 1);
        let g = greedy_decode(&p, &src);
        greedy_ok +=
            (b.len() == 1 && b[0].tokens == g.tokens && (b[0].log_prob - g.log_prob).abs() < C5_LOGP_TOL) as usize;
    }
    pass(
        exact == checked && greedy_ok == 100,
        format!(
            "exhaustive top-k agreement {exact}/{checked} (k = {enumerated}, widths {C5_FULL_WIDTH} and {}); width 1 = greedy on {greedy_ok}/100 inputs",
            2 * C5_FULL_WIDTH
        ),
    )
}

// ---------------------------------------------------------------- C6, C7

struct OverfitRun {
    steps: u64,
    converged_at: Option<u64>,
    accuracy: Vec<(u64, usize)>,
    window_means: Vec<f64>,
    max_clipped_norm: f64,
    max_attention_dev: f64,
    max_raw_norm: f64,
    clipped_steps: usize,
}

fn overfit_pairs() -> (Vec<ProcessedRecord>, usize) {
    let records = synth_reactions(80, 2, false);
    let pick: Vec<ReactionRecord> = records.into_iter().take(C6_PAIRS).collect();
    let vocab = build_vocab(&pick);
    let (processed, dropped) = tokenize_records(&pick, &vocab);
    assert_eq!(dropped, 0);
    (processed, vocab.len())
}

fn greedy_hits(p: &Seq2SeqParams<f32>, pairs: &[Pair]) -> usize {
    pairs.iter().filter(|(s, t)| greedy_decode(p, s).tokens == *t).count()
}

fn overfit() -> OverfitRun {
    let (records, vocab_size) = overfit_pairs();
    let pairs: Vec<Pair> = records
        .iter()
        .map(|r| (r.src_tokens.clone(), r.tgt_tokens.clone()))
        .collect();
    let cfg = Seq2SeqConfig {
        vocab_size,
        embedding_dim: 64,
        hidden_dim: 64,
        attention_dim: 64,
        encoder_layers: 2,
        decoder_layers: 2,
        learning_rate: 1e-3,
        rng_seed: 6,
        ..Seq2SeqConfig::default()
    };
    let (p, mut opt) = init_model(&cfg).unwrap();
    let opts = FitOptions {
        max_steps: C6_MAX_STEPS,
        eval_interval: 0,
        patience: 1,
    };
    let mut losses = Vec::new();
    let mut stats: Vec<StepStats> = Vec::new();
    let mut accuracy = Vec::new();
    let mut converged_at = None;
    let min_steps = (2 * C6_WINDOW) as u64;
    let r = fit(p, &mut opt, &pairs, &[], &opts, |s, params| {
        losses.push(s.loss);
        stats.push(s.clone());
        if s.step % C6_CHECK_EVERY == 0 {
            let hits = if converged_at.is_some() {
                pairs.len()
            } else {
                greedy_hits(params, &pairs)
            };
            accuracy.push((s.step, hits));
            if hits == pairs.len() && converged_at.is_none() {
                converged_at = Some(s.step);
            }
        }
        if converged_at.is_some() && s.step >= min_steps {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    // the parameters training ended with must themselves decode every pair
    if converged_at.is_some() && greedy_hits(&r.last, &pairs) != pairs.len() {
        converged_at = None;
    }
    let early = losses.len().min(C6_EARLY_STEPS);
    let window_means = losses[..early]
        .chunks_exact(C6_WINDOW)
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    OverfitRun {
        steps: r.steps,
        converged_at,
        accuracy,
        window_means,
        max_clipped_norm: stats.iter().map(|s| s.clipped_norm).fold(0.0, f64::max),
        max_attention_dev: stats.iter().map(|s| s.attention_deviation).fold(0.0, f64::max),
        max_raw_norm: stats.iter().map(|s| s.grad_norm).fold(0.0, f64::max),
        clipped_steps: stats.iter().filter(|s| s.grad_norm > C7_MAX_NORM).count(),
    }
}

fn c6(run: &OverfitRun) -> Outcome {
    let monotone = run.window_means.len() >= 2 && run.window_means.windows(2).all(|w| w[1] < w[0]);
    let means: Vec<String> = run.window_means.iter().map(|m| format!("{m:.3}")).collect();
    let trace: Vec<String> = run.accuracy.iter().map(|(s, h)| format!("{s}:{h}")).collect();
    pass(
        run.converged_at.is_some() && monotone,
        format!(
            "{} pairs, 100% greedy top-1 at step {}; {C6_WINDOW}-step loss means [{}]; hits {}",
            C6_PAIRS,
            run.converged_at.map_or("never".into(), |s| s.to_string()),
            means.join(", "),
            trace.join(" ")
        ),
    )
}

fn c7(run: &OverfitRun) -> Outcome {
    pass(
        run.max_clipped_norm <= C7_MAX_NORM * (1.0 + C7_NORM_SLACK) && run.max_attention_dev <= C7_ATTENTION_TOL,
        format!(
            "{} steps: max post-clip norm {:.6} (raw max {:.3}, {} steps clipped), max |sum(attention) - 1| {:.2e}",
            run.steps, run.max_clipped_norm, run.max_raw_norm, run.clipped_steps, run.max_attention_dev
        ),
    )
}

// ---------------------------------------------------------------- C8

fn c8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pool = [
        "CCO", "CC(=O)O", "c1ccccc1", "CCN", "OCCO", "CC(C)O", "CCCl", "C1CCNCC1",
    ];
    let ns: Vec<usize> = (1..=50).collect();
    let (mut files, mut violations) = (0, 0);
    for f in 0..20 {
        let examples: Vec<Example> = (0..150)
            .map(|i| Example {
                id: format!("e{i}"),
                class: rng.gen_range(1..=10),
                target: "CCCC".into(),
                reactants: format!("{}.{}", pool[i % pool.len()], pool[(i / pool.len()) % pool.len()]),
            })
            .collect();
        let preds: Vec<PredictionRecord> = examples
            .iter()
            .filter_map(|e| {
                if !rng.gen_bool(0.9) {
                    return None;
                }
                let n = rng.gen_range(0..70);
                let candidates = (0..n)
                    .map(|k| {
                        let reactants = if rng.gen_bool(0.04) {
                            // same set, other spelling and order
                            let parts: Vec<&str> = e.reactants.split('.').rev().collect();
                            parts.join(".")
                        } else if rng.gen_bool(0.1) {
                            "C1CC(".into()
                        } else {
                            format!("{}.{}", pool[rng.gen_range(0..pool.len())], "CC")
                        };
                        Candidate {
                            rank: k + 1,
                            reactants,
                            rule: None,
                            count: None,
                            log_prob: Some(-(k as f64)),
                        }
                    })
                    .collect();
                Some(PredictionRecord {
                    id: e.id.clone(),
                    target: e.target.clone(),
                    class: e.class,
                    candidates,
                })
            })
            .collect();
        let path = dir.path().join(format!("p{f}.jsonl"));
        retroseq_core::data::write_jsonl(&path, &preds).unwrap();
        let preds: Vec<PredictionRecord> = read_jsonl(&path).unwrap();
        let scored = score(&examples, &preds, lenient());
        let top = top_n_accuracy(&scored, &ns);
        let hits = |n: usize| scored.iter().filter(|s| s.match_rank.is_some_and(|r| r <= n)).count();
        let hist = rank_histogram(&scored, 50);
        let mut ok = ns.windows(2).all(|w| top[&w[0]] <= top[&w[1]]);
        ok &= max_accuracy(&scored) >= top[&50];
        let mut cum = 0;
        for (k, c) in hist.iter().enumerate() {
            cum += c;
            ok &= cum == hits(k + 1);
        }
        let report = MetricsReport::from_scored("m", &scored, &ns);
        ok &= report.rank_histogram.iter().sum::<usize>() == hits(10);
        files += 1;
        violations += (!ok) as usize;
    }
    pass(
        violations == 0,
        format!("{files} synthetic prediction files; identity violations {violations}"),
    )
}

// ---------------------------------------------------------------- C9

const TABLE1: [usize; 10] = [15204, 11972, 5667, 909, 672, 8405, 4642, 822, 1858, 231];
const RULES_VALID: usize = 29462;
const RULES_UNIQUE: usize = 2861;
const RULE_COVERAGE_PCT: f64 = 73.1;
const SEQ2SEQ_TOP1: f64 = 34.1;
const SEQ2SEQ_TOP50: f64 = 71.9;
const BASELINE_TOP1: f64 = 34.8;
const BASELINE_MAX: f64 = 69.8;

fn c9() -> Outcome {
    let Some(path) = dataset_path() else {
        return Outcome {
            pass: None,
            detail: "dataset not found (set RETROSEQ_DATASET); full-scale checks skipped".into(),
        };
    };
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        dataset: Some(path.clone()),
        out: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let mut notes = Vec::new();
    let mut ok = true;
    if let Err(e) = commands::preprocess(&cfg) {
        return pass(false, format!("preprocess failed: {e:#}"));
    }
    let mut all = Vec::new();
    for s in SPLITS {
        let recs: Vec<ProcessedRecord> = read_jsonl(&commands::split_path(&cfg.out, s)).unwrap();
        all.extend(recs.into_iter().map(|r| r.class));
    }
    let counts: Vec<usize> = class_counts(all).into_values().collect();
    let table_ok = counts == TABLE1;
    ok &= table_ok;
    notes.push(format!(
        "class counts {counts:?} {}",
        if table_ok { "match" } else { "differ" }
    ));
    let stats = commands::extract_rules(&cfg).unwrap();
    let cov = (1000.0 * stats.coverage).round() / 10.0;
    let rules_ok = stats.valid == RULES_VALID && stats.unique == RULES_UNIQUE && cov == RULE_COVERAGE_PCT;
    ok &= rules_ok;
    notes.push(format!(
        "rules {} valid / {} unique / {cov}%",
        stats.valid, stats.unique
    ));
    if std::env::var_os("RETROSEQ_FULL_TRAIN").is_none() {
        notes.push("accuracy targets skipped (set RETROSEQ_FULL_TRAIN=1)".into());
        return pass(ok, notes.join("; "));
    }
    commands::train(&cfg).unwrap();
    let test: Vec<ProcessedRecord> = read_jsonl(&commands::split_path(&cfg.out, "test")).unwrap();
    let targets = commands::targets_from_records(&test, None);
    let mut files = Vec::new();
    for m in [ModelKind::Baseline, ModelKind::Seq2seq] {
        let preds = commands::predict(&cfg, m, &targets).unwrap();
        let p = commands::predictions_path(&cfg.out, m);
        commands::write_predictions(&p, &preds).unwrap();
        files.push((m.name().to_string(), p));
    }
    let examples: Vec<Example> = test.iter().map(Example::from).collect();
    let reports = commands::evaluate(&cfg, &examples, &files, &cfg.out.join("report")).unwrap();
    let pct = |r: &MetricsReport, n: usize| 100.0 * r.top_n[&n];
    let checks = [
        ("baseline top-1", pct(&reports[0], 1), BASELINE_TOP1),
        ("baseline max", 100.0 * reports[0].max_accuracy, BASELINE_MAX),
        ("seq2seq top-1", pct(&reports[1], 1), SEQ2SEQ_TOP1),
        ("seq2seq top-50", pct(&reports[1], 50), SEQ2SEQ_TOP50),
    ];
    for (name, got, want) in checks {
        let close = (got - want).abs() <= C9_ACCURACY_TOL;
        ok &= close;
        notes.push(format!("{name} {got:.1}% (target {want}%)"));
    }
    pass(ok, notes.join("; "))
}

fn main() {
    // `cargo test -- <filter>` style arguments are accepted and ignored
    let mut ok = true;
    ok &= report(1, "canonicalization invariance", Some(MINUTE), c1);
    ok &= report(2, "matcher oracle equivalence", Some(MINUTE), c2);
    ok &= report(3, "template self-consistency", Some(5 * MINUTE), c3);
    ok &= report(4, "gradient check", Some(2 * MINUTE), c4);
    ok &= report(5, "beam-search oracle", Some(MINUTE), c5);
    let start = Instant::now();
    let run = overfit();
    let elapsed = start.elapsed();
    ok &= report(6, "overfit check", Some(30 * MINUTE), || {
        let mut o = c6(&run);
        o.detail = format!("{} (training {:.0}s)", o.detail, elapsed.as_secs_f64());
        if elapsed > 30 * MINUTE {
            o.pass = Some(false);
        }
        o
    });
    ok &= report(7, "clip and attention invariants", None, || c7(&run));
    ok &= report(8, "metric identities", None, c8);
    ok &= report(9, "full-scale reproduction", None, c9);
    if !ok {
        std::process::exit(1);
    }
}
