//! Beam search and greedy decoding. PAD and BOS are never emitted; scores are
//! raw summed token log probabilities.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::model::{
    bind, decode_step, decoder_step_vars, encode, encode_vars, log_softmax, DecoderState, Seq2SeqParams, StateVars,
};
use crate::tape::{Scalar, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamHypothesis {
    /// Emitted tokens; ends with EOS when `complete`.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub complete: bool,
}

impl BeamHypothesis {
    /// Tokens without the trailing EOS.
    pub fn body(&self) -> &[u32] {
        if self.complete {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

fn emittable<T>(params: &Seq2SeqParams<T>, token: usize) -> bool {
    let c = &params.config;
    token != c.pad_id as usize && token != c.bos_id as usize
}

enum Cand {
    Frozen(usize),
    Extend(usize, usize),
}

/// Beam search over at most `max_decode_len` steps. Each step scores every
/// one-token extension of the live hypotheses together with the completed
/// ones and keeps the best `width`; completed hypotheses are never extended.
/// Ties keep the earlier candidate (completed first, then by parent and token
/// id). Returns completed hypotheses by descending log probability, or the
/// live ones flagged incomplete when none finished.
pub fn beam_decode<T: Scalar>(params: &Seq2SeqParams<T>, src: &[u32], width: usize) -> Vec<BeamHypothesis> {
    let cfg = &params.config;
    if width == 0 || src.is_empty() {
        return Vec::new();
    }
    let enc = encode(params, src);
    let mut state = enc.initial.clone();
    let mut live = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        complete: false,
    }];
    let mut done: Vec<BeamHypothesis> = Vec::new();
    for _ in 0..cfg.max_decode_len {
        let prev: Vec<u32> = live
            .iter()
            .map(|h| h.tokens.last().copied().unwrap_or(cfg.bos_id))
            .collect();
        let out = decode_step(params, &prev, &state, &enc, None);
        let lsm = log_softmax(&out.logits);
        let mut cands: Vec<(f64, Cand)> = done
            .iter()
            .enumerate()
            .map(|(i, h)| (h.log_prob, Cand::Frozen(i)))
            .collect();
        for (r, h) in live.iter().enumerate() {
            for (tok, &lp) in lsm.row(r).iter().enumerate() {
                if emittable(params, tok) {
                    cands.push((h.log_prob + lp, Cand::Extend(r, tok)));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0));
        cands.truncate(width);
        let mut next_done = Vec::new();
        let mut next_live = Vec::new();
        let mut parents = Vec::new();
        for (score, c) in cands {
            match c {
                Cand::Frozen(i) => next_done.push(done[i].clone()),
                Cand::Extend(r, tok) => {
                    let mut tokens = live[r].tokens.clone();
                    tokens.push(tok as u32);
                    let complete = tok as u32 == cfg.eos_id;
                    let h = BeamHypothesis {
                        tokens,
                        log_prob: score,
                        complete,
                    };
                    if complete {
                        next_done.push(h);
                    } else {
                        next_live.push(h);
                        parents.push(r);
                    }
                }
            }
        }
        done = next_done;
        live = next_live;
        if live.is_empty() {
            break;
        }
        state = out.state.select(&parents);
    }
    let mut result = if done.is_empty() { live } else { done };
    result.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
    result
}

/// Greedy decoding of several sources at once. Agrees with
/// [`greedy_decode`] up to float summation order.
pub fn greedy_decode_batch<T: Scalar>(params: &Seq2SeqParams<T>, srcs: &[&[u32]]) -> Vec<BeamHypothesis> {
    let cfg = &params.config;
    if srcs.is_empty() {
        return Vec::new();
    }
    let batch = srcs.len();
    let (stacked, proj, lens, mut state) = {
        let mut tape = Tape::new();
        let p = bind(&mut tape, params, false);
        let enc = encode_vars(&mut tape, &p, srcs, &mut None);
        let init = StateVars::initial(&mut tape, &enc, batch, cfg.hidden_dim);
        let state = DecoderState {
            h: init.layers.iter().map(|(h, _)| tape.to_owned(*h)).collect(),
            c: init.layers.iter().map(|(_, c)| tape.to_owned(*c)).collect(),
            ctx: tape.to_owned(init.ctx),
        };
        (tape.to_owned(enc.stacked), tape.to_owned(enc.proj), enc.lens, state)
    };
    let mut hyps: Vec<BeamHypothesis> = (0..batch)
        .map(|_| BeamHypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            complete: false,
        })
        .collect();
    for _ in 0..cfg.max_decode_len {
        if hyps.iter().all(|h| h.complete) {
            break;
        }
        let prev: Vec<u32> = hyps
            .iter()
            .map(|h| h.tokens.last().copied().unwrap_or(cfg.bos_id))
            .collect();
        let mut tape = Tape::new();
        let p = bind(&mut tape, params, false);
        let mut sv = StateVars {
            layers: state
                .h
                .iter()
                .zip(&state.c)
                .map(|(h, c)| (tape.borrowed(h), tape.borrowed(c)))
                .collect(),
            ctx: tape.borrowed(&state.ctx),
        };
        let st = tape.borrowed(&stacked);
        let pr = tape.borrowed(&proj);
        let (logits, _) = decoder_step_vars(&mut tape, &p, &prev, &mut sv, st, pr, &lens, &mut None);
        let lsm = log_softmax(&tape.to_owned(logits));
        for (r, h) in hyps.iter_mut().enumerate() {
            if h.complete {
                continue;
            }
            let (tok, lp) = argmax(params, lsm.row(r).iter().copied());
            h.tokens.push(tok as u32);
            h.log_prob += lp;
            h.complete = tok as u32 == cfg.eos_id;
        }
        state = DecoderState {
            h: sv.layers.iter().map(|(h, _)| tape.to_owned(*h)).collect(),
            c: sv.layers.iter().map(|(_, c)| tape.to_owned(*c)).collect(),
            ctx: tape.to_owned(sv.ctx),
        };
    }
    hyps
}

fn argmax<T>(params: &Seq2SeqParams<T>, row: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (tok, lp) in row.enumerate() {
        if emittable(params, tok) && (best.0 == usize::MAX || lp > best.1) {
            best = (tok, lp);
        }
    }
    best
}

/// Greedy decoding of one source: the most probable token at every step
/// until EOS or `max_decode_len`.
pub fn greedy_decode<T: Scalar>(params: &Seq2SeqParams<T>, src: &[u32]) -> BeamHypothesis {
    let cfg = &params.config;
    let enc = encode(params, src);
    let mut state = enc.initial.clone();
    let mut h = BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        complete: false,
    };
    while h.tokens.len() < cfg.max_decode_len && !h.complete {
        let prev = h.tokens.last().copied().unwrap_or(cfg.bos_id);
        let out = decode_step(params, &[prev], &state, &enc, None);
        let lsm: Array2<f64> = log_softmax(&out.logits);
        let (tok, lp) = argmax(params, lsm.row(0).iter().copied());
        h.tokens.push(tok as u32);
        h.log_prob += lp;
        h.complete = tok as u32 == cfg.eos_id;
        state = out.state;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Seq2SeqConfig;
    use crate::model::{init_params, sequence_loss};

    fn toy() -> Seq2SeqParams<f32> {
        let cfg = Seq2SeqConfig {
            vocab_size: 7,
            embedding_dim: 4,
            hidden_dim: 4,
            encoder_layers: 1,
            decoder_layers: 2,
            attention_dim: 4,
            max_decode_len: 5,
            rng_seed: 3,
            ..Seq2SeqConfig::default()
        };
        let mut p = init_params(&cfg).unwrap();
        // sharper output distribution than the near-uniform initialization
        let w = p.layout.out_w;
        p.tensors[w].mapv_inplace(|x| x * 8.0);
        p
    }

    #[test]
    fn width_one_is_greedy() {
        let p = toy();
        let src = [4u32, 5, 6];
        let g = greedy_decode(&p, &src);
        let b = beam_decode(&p, &src, 1);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].tokens, g.tokens);
        assert!((b[0].log_prob - g.log_prob).abs() < 1e-9);
        let batch = greedy_decode_batch(&p, &[&src, &[6, 6]]);
        assert_eq!(batch[0].tokens, g.tokens);
    }

    #[test]
    fn results_sorted_and_scored_consistently() {
        let p = toy().cast::<f64>();
        let src = [4u32, 6];
        let hyps = beam_decode(&p, &src, 6);
        assert!(!hyps.is_empty() && hyps.len() <= 6);
        for w in hyps.windows(2) {
            assert!(w[0].log_prob >= w[1].log_prob);
        }
        for h in &hyps {
            assert!(h.log_prob <= 0.0);
            if h.complete {
                assert_eq!(h.tokens.last(), Some(&3));
                let nll = sequence_loss(&p, &src, &h.tokens) * h.tokens.len() as f64;
                assert!((nll + h.log_prob).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn no_completion_returns_incomplete() {
        let mut p = toy();
        let b = p.layout.out_b;
        p.tensors[b][(0, 3)] = -1e4;
        let hyps = beam_decode(&p, &[4, 5], 3);
        assert_eq!(hyps.len(), 3);
        assert!(hyps.iter().all(|h| !h.complete && h.tokens.len() == 5));
    }
}
