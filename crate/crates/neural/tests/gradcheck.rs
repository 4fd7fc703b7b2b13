use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retroseq_neural::optim::loss_and_grads;
use retroseq_neural::{init_params, Seq2SeqConfig, Seq2SeqParams};

const EPS: f64 = 1e-4;

fn micro() -> Seq2SeqConfig {
    Seq2SeqConfig {
        vocab_size: 10,
        embedding_dim: 5,
        hidden_dim: 6,
        encoder_layers: 2,
        decoder_layers: 2,
        attention_dim: 4,
        max_seq_len: 5,
        max_decode_len: 5,
        rng_seed: 17,
        ..Seq2SeqConfig::default()
    }
}

fn perturbed(cfg: &Seq2SeqConfig, seed: u64) -> Seq2SeqParams<f64> {
    // push weights away from the near-uniform initialization so every gate
    // and the attention softmax are in a non-trivial regime
    let mut p = init_params(cfg).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in &mut p.tensors {
        t.mapv_inplace(|x| x + rng.gen_range(-0.5..0.5));
    }
    p
}

fn loss(p: &Seq2SeqParams<f64>, batch: &[(&[u32], &[u32])]) -> f64 {
    loss_and_grads(p, batch, None).loss
}

/// Largest per-tensor relative error `|g - fd| / max(|g|, |fd|)`.
fn check(p: &Seq2SeqParams<f64>, batch: &[(&[u32], &[u32])]) -> Vec<(String, f64)> {
    let analytic = loss_and_grads(p, batch, None).grads;
    let mut q = p.clone();
    let mut report = Vec::new();
    for (i, name) in p.layout.names.iter().enumerate() {
        let mut diff = 0.0;
        let (mut na, mut nf) = (0.0, 0.0);
        for idx in 0..p.tensors[i].len() {
            let (r, c) = (idx / p.tensors[i].ncols(), idx % p.tensors[i].ncols());
            let x = p.tensors[i][(r, c)];
            q.tensors[i][(r, c)] = x + EPS;
            let up = loss(&q, batch);
            q.tensors[i][(r, c)] = x - EPS;
            let down = loss(&q, batch);
            q.tensors[i][(r, c)] = x;
            let fd = (up - down) / (2.0 * EPS);
            let g = analytic[i][(r, c)];
            diff += (g - fd) * (g - fd);
            na += g * g;
            nf += fd * fd;
        }
        let denom = na.sqrt().max(nf.sqrt());
        let rel = if denom < 1e-12 { 0.0 } else { diff.sqrt() / denom };
        report.push((name.clone(), rel));
    }
    report
}

#[test]
fn gradients_match_central_differences() {
    let cfg = micro();
    let p = perturbed(&cfg, 1);
    // ragged lengths exercise the padding masks on both sides
    let batch: [(&[u32], &[u32]); 3] = [
        (&[4, 5, 6, 7, 8], &[9, 4, 3]),
        (&[6], &[5, 5, 7, 8, 3]),
        (&[9, 8], &[3]),
    ];
    let report = check(&p, &batch);
    assert_eq!(report.len(), p.tensors.len());
    for (name, rel) in &report {
        assert!(*rel <= 1e-4, "{name}: relative error {rel:e}");
    }
}

#[test]
fn single_layer_gradients_match() {
    let cfg = Seq2SeqConfig {
        encoder_layers: 1,
        decoder_layers: 1,
        embedding_dim: 3,
        hidden_dim: 3,
        attention_dim: 2,
        vocab_size: 7,
        ..micro()
    };
    let p = perturbed(&cfg, 2);
    let batch: [(&[u32], &[u32]); 2] = [(&[4, 5, 6], &[6, 3]), (&[5, 5], &[4, 4, 3])];
    for (name, rel) in check(&p, &batch) {
        assert!(rel <= 1e-4, "{name}: relative error {rel:e}");
    }
}

#[test]
fn every_tensor_receives_gradient() {
    let p = perturbed(&micro(), 3);
    let batch: [(&[u32], &[u32]); 1] = [(&[4, 5], &[6, 3])];
    let grads = loss_and_grads(&p, &batch, None).grads;
    for (g, name) in grads.iter().zip(&p.layout.names) {
        assert!(g.iter().any(|&x| x != 0.0), "{name} has zero gradient");
    }
}
