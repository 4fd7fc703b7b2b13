//! Parameters and forward computation.
//!
//! Encoder: token embedding, then `encoder_layers` bidirectional LSTM layers;
//! layer k > 0 reads the concatenated outputs of layer k - 1. The final
//! forward and backward states of the top layer are mapped by a learned
//! affine bridge to every decoder layer's initial state (tanh on h, linear
//! on c).
//!
//! Decoder step: input is the previous token's embedding concatenated with the
//! previous context vector; the stacked LSTM runs one step; the top state
//! attends over the encoder outputs; logits are an affine map of
//! `[state; context]`. Dropout acts on the inputs of layers above the first.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, Seq2SeqConfig};
use crate::tape::{Scalar, Tape, Var};

/// Parameter indices of one LSTM. `w` is `(input + hidden) × 4·hidden`, gate
/// blocks ordered input, forget, candidate, output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstmIdx {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeIdx {
    pub wh: usize,
    pub bh: usize,
    pub wc: usize,
    pub bc: usize,
}

/// Where each tensor lives in [`Seq2SeqParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub embedding: usize,
    /// `[forward, backward]` per encoder layer.
    pub encoder: Vec<[LstmIdx; 2]>,
    pub bridge: Vec<BridgeIdx>,
    pub decoder: Vec<LstmIdx>,
    pub att_enc: usize,
    pub att_dec: usize,
    pub att_v: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub names: Vec<String>,
    pub shapes: Vec<(usize, usize)>,
}

impl Layout {
    pub fn new(cfg: &Seq2SeqConfig) -> Self {
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut add = |name: String, shape: (usize, usize)| {
            names.push(name);
            shapes.push(shape);
            names.len() - 1
        };
        let (e, h, a, v) = (cfg.embedding_dim, cfg.hidden_dim, cfg.attention_dim, cfg.vocab_size);
        let embedding = add("embedding".into(), (v, e));
        let mut encoder = Vec::new();
        for l in 0..cfg.encoder_layers {
            let input = if l == 0 { e } else { 2 * h };
            let mut dirs = [LstmIdx { w: 0, b: 0 }; 2];
            for (d, dir) in ["fw", "bw"].iter().enumerate() {
                dirs[d] = LstmIdx {
                    w: add(format!("encoder.{l}.{dir}.w"), (input + h, 4 * h)),
                    b: add(format!("encoder.{l}.{dir}.b"), (1, 4 * h)),
                };
            }
            encoder.push(dirs);
        }
        let bridge = (0..cfg.decoder_layers)
            .map(|l| BridgeIdx {
                wh: add(format!("bridge.{l}.wh"), (2 * h, h)),
                bh: add(format!("bridge.{l}.bh"), (1, h)),
                wc: add(format!("bridge.{l}.wc"), (2 * h, h)),
                bc: add(format!("bridge.{l}.bc"), (1, h)),
            })
            .collect();
        let decoder = (0..cfg.decoder_layers)
            .map(|l| {
                let input = if l == 0 { e + 2 * h } else { h };
                LstmIdx {
                    w: add(format!("decoder.{l}.w"), (input + h, 4 * h)),
                    b: add(format!("decoder.{l}.b"), (1, 4 * h)),
                }
            })
            .collect();
        let att_enc = add("attention.w_enc".into(), (2 * h, a));
        let att_dec = add("attention.w_dec".into(), (h, a));
        let att_v = add("attention.v".into(), (a, 1));
        let out_w = add("output.w".into(), (3 * h, v));
        let out_b = add("output.b".into(), (1, v));
        Layout {
            embedding,
            encoder,
            bridge,
            decoder,
            att_enc,
            att_dec,
            att_v,
            out_w,
            out_b,
            names,
            shapes,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn lstm_biases(&self) -> impl Iterator<Item = usize> + '_ {
        self.encoder.iter().flatten().chain(&self.decoder).map(|l| l.b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqParams<T> {
    pub config: Seq2SeqConfig,
    pub layout: Layout,
    pub tensors: Vec<Array2<T>>,
}

impl<T: Scalar> Seq2SeqParams<T> {
    pub fn cast<U: Scalar>(&self) -> Seq2SeqParams<U> {
        Seq2SeqParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            tensors: self.tensors.iter().map(|t| t.mapv(|x| U::of(x.f64()))).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Array2<T>> {
        self.layout
            .names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn n_weights(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }
}

/// Fresh parameters. Matrices are drawn from U(-1/√fan_in, 1/√fan_in), the
/// embedding from U(-0.1, 0.1); biases are zero except LSTM forget gates,
/// which start at 1. Tensors are filled in layout order from a ChaCha8
/// stream seeded with `cfg.rng_seed`.
pub fn init_params(cfg: &Seq2SeqConfig) -> Result<Seq2SeqParams<f32>, ConfigError> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.rng_seed);
    let mut tensors: Vec<Array2<f32>> = layout
        .names
        .iter()
        .zip(&layout.shapes)
        .map(|(name, &(r, c))| {
            if r == 1 {
                return Array2::zeros((r, c));
            }
            let bound = if name == "embedding" {
                0.1
            } else {
                1.0 / (r as f64).sqrt()
            };
            Array2::from_shape_simple_fn((r, c), || rng.gen_range(-bound..bound) as f32)
        })
        .collect();
    let h = cfg.hidden_dim;
    for b in layout.lstm_biases().collect::<Vec<_>>() {
        tensors[b].slice_mut(ndarray::s![.., h..2 * h]).fill(1.0);
    }
    Ok(Seq2SeqParams {
        config: cfg.clone(),
        layout,
        tensors,
    })
}

/// Inverted dropout with a seeded stream.
pub struct Dropout<'r> {
    pub keep: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply<T: Scalar>(&mut self, tape: &mut Tape<'_, T>, x: Var) -> Var {
        if self.keep >= 1.0 {
            return x;
        }
        let (r, c) = tape.value(x).dim();
        let scale = T::of(1.0 / self.keep);
        let keep = self.keep;
        let rng = &mut *self.rng;
        let mask = Array2::from_shape_simple_fn((r, c), || if rng.gen_bool(keep) { scale } else { T::zero() });
        tape.mul_const(x, mask)
    }
}

fn maybe_drop<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, drop: &mut Option<Dropout<'_>>) -> Var {
    match drop {
        Some(d) => d.apply(tape, x),
        None => x,
    }
}

/// Parameters placed on a tape.
pub struct Bound<'p> {
    pub vars: Vec<Var>,
    pub cfg: &'p Seq2SeqConfig,
    pub layout: &'p Layout,
}

/// Puts every tensor on `tape`; with `trainable` they are gradient leaves.
pub fn bind<'a, T: Scalar>(tape: &mut Tape<'a, T>, params: &'a Seq2SeqParams<T>, trainable: bool) -> Bound<'a> {
    let vars = params
        .tensors
        .iter()
        .enumerate()
        .map(|(i, t)| if trainable { tape.param(i, t) } else { tape.borrowed(t) })
        .collect();
    Bound {
        vars,
        cfg: &params.config,
        layout: &params.layout,
    }
}

fn lstm_cell<T: Scalar>(tape: &mut Tape<'_, T>, p: &Bound<'_>, idx: LstmIdx, x: Var, h: Var, c: Var) -> (Var, Var) {
    let n = p.cfg.hidden_dim;
    let xh = tape.concat(&[x, h]);
    let pre = tape.matmul(xh, p.vars[idx.w]);
    let gates = tape.add_bias(pre, p.vars[idx.b]);
    let i = tape.slice(gates, 0, n);
    let i = tape.sigmoid(i);
    let f = tape.slice(gates, n, n);
    let f = tape.sigmoid(f);
    let g = tape.slice(gates, 2 * n, n);
    let g = tape.tanh(g);
    let o = tape.slice(gates, 3 * n, n);
    let o = tape.sigmoid(o);
    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c_next = tape.add(fc, ig);
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc);
    (h_next, c_next)
}

/// Encoder result on a tape. `stacked` and `proj` hold position-major rows
/// (`t * batch + b`).
pub struct EncodedVars {
    pub outputs: Vec<Var>,
    pub stacked: Var,
    pub proj: Var,
    pub lens: Vec<usize>,
    pub init: Vec<(Var, Var)>,
}

/// Runs the encoder over a batch of sources (unpadded, each non-empty).
pub fn encode_vars<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &Bound<'_>,
    srcs: &[&[u32]],
    drop: &mut Option<Dropout<'_>>,
) -> EncodedVars {
    let batch = srcs.len();
    let hid = p.cfg.hidden_dim;
    let lens: Vec<usize> = srcs.iter().map(|s| s.len()).collect();
    let steps = lens.iter().copied().max().expect("non-empty batch");
    let pad = p.cfg.pad_id;
    let masks: Vec<Vec<bool>> = (0..steps).map(|t| lens.iter().map(|&l| t < l).collect()).collect();
    let mut inputs: Vec<Var> = (0..steps)
        .map(|t| {
            let ids: Vec<usize> = srcs.iter().map(|s| *s.get(t).unwrap_or(&pad) as usize).collect();
            let e = tape.gather(p.vars[p.layout.embedding], &ids);
            if p.cfg.embedding_dropout {
                maybe_drop(tape, e, drop)
            } else {
                e
            }
        })
        .collect();
    let mut finals = None;
    for (l, dirs) in p.layout.encoder.iter().enumerate() {
        if l > 0 {
            inputs = inputs.into_iter().map(|x| maybe_drop(tape, x, drop)).collect();
        }
        let mut outs = [vec![None; steps], vec![None; steps]];
        let mut last = Vec::new();
        for (d, idx) in dirs.iter().enumerate() {
            let mut h = tape.zeros(batch, hid);
            let mut c = tape.zeros(batch, hid);
            let order: Vec<usize> = if d == 0 {
                (0..steps).collect()
            } else {
                (0..steps).rev().collect()
            };
            for t in order {
                let (hn, cn) = lstm_cell(tape, p, *idx, inputs[t], h, c);
                h = tape.blend(hn, h, &masks[t]);
                c = tape.blend(cn, c, &masks[t]);
                outs[d][t] = Some(h);
            }
            last.push((h, c));
        }
        inputs = (0..steps)
            .map(|t| tape.concat(&[outs[0][t].unwrap(), outs[1][t].unwrap()]))
            .collect();
        finals = Some(last);
    }
    let finals = finals.expect("at least one encoder layer");
    let h_cat = tape.concat(&[finals[0].0, finals[1].0]);
    let c_cat = tape.concat(&[finals[0].1, finals[1].1]);
    let init = p
        .layout
        .bridge
        .iter()
        .map(|b| {
            let h = tape.matmul(h_cat, p.vars[b.wh]);
            let h = tape.add_bias(h, p.vars[b.bh]);
            let h = tape.tanh(h);
            let c = tape.matmul(c_cat, p.vars[b.wc]);
            let c = tape.add_bias(c, p.vars[b.bc]);
            (h, c)
        })
        .collect();
    let stacked = tape.vstack(&inputs);
    let proj = tape.matmul(stacked, p.vars[p.layout.att_enc]);
    EncodedVars {
        outputs: inputs,
        stacked,
        proj,
        lens,
        init,
    }
}

/// Decoder recurrent state on a tape.
#[derive(Clone)]
pub struct StateVars {
    pub layers: Vec<(Var, Var)>,
    pub ctx: Var,
}

impl StateVars {
    pub fn initial<T: Scalar>(tape: &mut Tape<'_, T>, enc: &EncodedVars, batch: usize, hidden: usize) -> Self {
        StateVars {
            layers: enc.init.clone(),
            ctx: tape.zeros(batch, 2 * hidden),
        }
    }
}

/// One decoder step. Returns the logits and the context node (whose
/// attention weights can be read from the tape).
pub fn decoder_step_vars<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &Bound<'_>,
    prev: &[u32],
    state: &mut StateVars,
    enc_stacked: Var,
    enc_proj: Var,
    lens: &[usize],
    drop: &mut Option<Dropout<'_>>,
) -> (Var, Var) {
    let ids: Vec<usize> = prev.iter().map(|&t| t as usize).collect();
    let mut emb = tape.gather(p.vars[p.layout.embedding], &ids);
    if p.cfg.embedding_dropout {
        emb = maybe_drop(tape, emb, drop);
    }
    let mut x = tape.concat(&[emb, state.ctx]);
    for (l, idx) in p.layout.decoder.iter().enumerate() {
        if l > 0 {
            x = maybe_drop(tape, x, drop);
        }
        let (h, c) = state.layers[l];
        let (hn, cn) = lstm_cell(tape, p, *idx, x, h, c);
        state.layers[l] = (hn, cn);
        x = hn;
    }
    let dec_proj = tape.matmul(x, p.vars[p.layout.att_dec]);
    let ctx = tape.attention(enc_proj, enc_stacked, dec_proj, p.vars[p.layout.att_v], lens);
    state.ctx = ctx;
    let feat = tape.concat(&[x, ctx]);
    let logits = tape.matmul(feat, p.vars[p.layout.out_w]);
    let logits = tape.add_bias(logits, p.vars[p.layout.out_b]);
    (logits, ctx)
}

/// Summed token negative log likelihood of a batch under teacher forcing,
/// plus the number of scored tokens. Targets end with EOS; the decoder input
/// is BOS followed by the target shifted right. Positions past a target's end
/// are padding and excluded.
pub fn batch_nll<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &Bound<'_>,
    pairs: &[(&[u32], &[u32])],
    drop: &mut Option<Dropout<'_>>,
) -> (Var, usize) {
    let srcs: Vec<&[u32]> = pairs.iter().map(|(s, _)| *s).collect();
    let enc = encode_vars(tape, p, &srcs, drop);
    let batch = pairs.len();
    let mut state = StateVars::initial(tape, &enc, batch, p.cfg.hidden_dim);
    let steps = pairs.iter().map(|(_, t)| t.len()).max().unwrap_or(0);
    let mut total: Option<Var> = None;
    let mut tokens = 0;
    for t in 0..steps {
        let prev: Vec<u32> = pairs
            .iter()
            .map(|(_, tgt)| match t {
                0 => p.cfg.bos_id,
                _ => *tgt.get(t - 1).unwrap_or(&p.cfg.pad_id),
            })
            .collect();
        let (logits, _) = decoder_step_vars(tape, p, &prev, &mut state, enc.stacked, enc.proj, &enc.lens, drop);
        let targets: Vec<usize> = pairs
            .iter()
            .map(|(_, tgt)| *tgt.get(t).unwrap_or(&p.cfg.pad_id) as usize)
            .collect();
        let weights: Vec<f64> = pairs
            .iter()
            .map(|(_, tgt)| if t < tgt.len() { 1.0 } else { 0.0 })
            .collect();
        tokens += weights.iter().filter(|&&w| w > 0.0).count();
        let ce = tape.cross_entropy(logits, &targets, &weights);
        total = Some(match total {
            Some(acc) => tape.add(acc, ce),
            None => ce,
        });
    }
    let total = total.unwrap_or_else(|| tape.zeros(1, 1));
    (total, tokens)
}

/// Mean per-token negative log likelihood of `tgt` given `src`, without
/// dropout. `exp` of this is the perplexity.
pub fn sequence_loss<T: Scalar>(params: &Seq2SeqParams<T>, src: &[u32], tgt: &[u32]) -> f64 {
    let (sum, n) = corpus_nll(params, &[(src, tgt)], 1);
    sum / n.max(1) as f64
}

/// Summed negative log likelihood and token count over many pairs,
/// evaluated in batches of `batch_size`.
pub fn corpus_nll<T: Scalar>(params: &Seq2SeqParams<T>, pairs: &[(&[u32], &[u32])], batch_size: usize) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let p = bind(&mut tape, params, false);
        let (nll, n) = batch_nll(&mut tape, &p, chunk, &mut None);
        sum += tape.value(nll)[(0, 0)].f64();
        count += n;
    }
    (sum, count)
}

/// Encoder output for one source, detached from any tape.
#[derive(Debug, Clone)]
pub struct Encoded<T> {
    /// `len × 2·hidden`, forward half first.
    pub outputs: Array2<T>,
    /// `len × attention_dim`.
    pub proj: Array2<T>,
    pub initial: DecoderState<T>,
}

/// Decoder recurrent state, one row per hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState<T> {
    pub h: Vec<Array2<T>>,
    pub c: Vec<Array2<T>>,
    pub ctx: Array2<T>,
}

impl<T: Scalar> DecoderState<T> {
    pub fn rows(&self) -> usize {
        self.ctx.nrows()
    }

    /// State with rows picked (and possibly repeated) by `rows`.
    pub fn select(&self, rows: &[usize]) -> Self {
        DecoderState {
            h: self.h.iter().map(|a| a.select(Axis(0), rows)).collect(),
            c: self.c.iter().map(|a| a.select(Axis(0), rows)).collect(),
            ctx: self.ctx.select(Axis(0), rows),
        }
    }

    fn bind<'a>(&'a self, tape: &mut Tape<'a, T>) -> StateVars {
        StateVars {
            layers: self
                .h
                .iter()
                .zip(&self.c)
                .map(|(h, c)| (tape.borrowed(h), tape.borrowed(c)))
                .collect(),
            ctx: tape.borrowed(&self.ctx),
        }
    }

    fn from_vars(tape: &Tape<'_, T>, s: &StateVars) -> Self {
        DecoderState {
            h: s.layers.iter().map(|(h, _)| tape.to_owned(*h)).collect(),
            c: s.layers.iter().map(|(_, c)| tape.to_owned(*c)).collect(),
            ctx: tape.to_owned(s.ctx),
        }
    }
}

/// Encodes one non-empty source.
pub fn encode<T: Scalar>(params: &Seq2SeqParams<T>, src: &[u32]) -> Encoded<T> {
    let mut tape = Tape::new();
    let p = bind(&mut tape, params, false);
    let enc = encode_vars(&mut tape, &p, &[src], &mut None);
    let state = StateVars::initial(&mut tape, &enc, 1, params.config.hidden_dim);
    Encoded {
        outputs: tape.to_owned(enc.stacked),
        proj: tape.to_owned(enc.proj),
        initial: DecoderState::from_vars(&tape, &state),
    }
}

/// Additive attention of decoder states `s` (`rows × hidden`) over one
/// encoded source. Returns the context (`rows × 2·hidden`) and weights
/// (`rows × len`).
pub fn attend<T: Scalar>(params: &Seq2SeqParams<T>, s: &Array2<T>, enc: &Encoded<T>) -> (Array2<T>, Array2<T>) {
    let mut tape = Tape::new();
    let p = bind(&mut tape, params, false);
    let sv = tape.borrowed(s);
    let stacked = tape.borrowed(&enc.outputs);
    let proj = tape.borrowed(&enc.proj);
    let dp = tape.matmul(sv, p.vars[params.layout.att_dec]);
    let lens = vec![enc.outputs.nrows(); s.nrows()];
    let ctx = tape.attention(proj, stacked, dp, p.vars[params.layout.att_v], &lens);
    let w = tape.attention_weights(ctx).expect("attention node").to_owned();
    (tape.to_owned(ctx), w)
}

/// Output of [`decode_step`].
#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    /// `rows × vocab`.
    pub logits: Array2<T>,
    pub state: DecoderState<T>,
    /// `rows × len`.
    pub weights: Array2<T>,
}

/// One decoder step for every row of `state`, all attending over `enc`.
pub fn decode_step<T: Scalar>(
    params: &Seq2SeqParams<T>,
    prev: &[u32],
    state: &DecoderState<T>,
    enc: &Encoded<T>,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> StepOutput<T> {
    let mut tape = Tape::new();
    let p = bind(&mut tape, params, false);
    let mut sv = state.bind(&mut tape);
    let stacked = tape.borrowed(&enc.outputs);
    let proj = tape.borrowed(&enc.proj);
    let lens = vec![enc.outputs.nrows(); prev.len()];
    let mut drop = dropout_rng.map(|rng| Dropout {
        keep: params.config.dropout_keep,
        rng,
    });
    let (logits, ctx) = decoder_step_vars(&mut tape, &p, prev, &mut sv, stacked, proj, &lens, &mut drop);
    StepOutput {
        logits: tape.to_owned(logits),
        weights: tape.attention_weights(ctx).expect("attention node").to_owned(),
        state: DecoderState::from_vars(&tape, &sv),
    }
}

/// Row-wise log softmax in f64.
pub fn log_softmax<T: Scalar>(logits: &Array2<T>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    for (r, row) in logits.rows().into_iter().enumerate() {
        let xs: Vec<f64> = row.iter().map(|x| x.f64()).collect();
        let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        for (c, x) in xs.iter().enumerate() {
            out[(r, c)] = x - lse;
        }
    }
    out
}
