//! Adam with global-norm gradient clipping.

use ndarray::{Array2, Zip};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Seq2SeqConfig};
use crate::model::{batch_nll, bind, init_params, Dropout, Seq2SeqParams};
use crate::tape::{Scalar, Tape};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Adam moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Array2<f32>>,
    pub v: Vec<Array2<f32>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new<T>(params: &Seq2SeqParams<T>) -> Self {
        let zeros = || params.layout.shapes.iter().map(|&s| Array2::zeros(s)).collect();
        OptimizerState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// Fresh parameters and zeroed optimizer state.
pub fn init_model(cfg: &Seq2SeqConfig) -> Result<(Seq2SeqParams<f32>, OptimizerState), ConfigError> {
    let params = init_params(cfg)?;
    let opt = OptimizerState::new(&params);
    Ok((params, opt))
}

/// Mean token loss, per-tensor gradients of that mean and the largest
/// attention normalization error seen.
pub struct LossGrad<T> {
    pub loss: f64,
    pub tokens: usize,
    pub grads: Vec<Array2<T>>,
    pub attention_deviation: f64,
}

/// Forward and backward pass over one batch. Dropout is applied when `rng`
/// is given.
pub fn loss_and_grads<T: Scalar>(
    params: &Seq2SeqParams<T>,
    batch: &[(&[u32], &[u32])],
    rng: Option<&mut ChaCha8Rng>,
) -> LossGrad<T> {
    let mut tape = Tape::new();
    let p = bind(&mut tape, params, true);
    let mut drop = rng.map(|rng| Dropout {
        keep: params.config.dropout_keep,
        rng,
    });
    let (total, tokens) = batch_nll(&mut tape, &p, batch, &mut drop);
    let mean = tape.scale(total, T::of(1.0 / tokens.max(1) as f64));
    let loss = tape.value(mean)[(0, 0)].f64();
    let grads = tape
        .backward(mean, params.tensors.len())
        .into_iter()
        .zip(&params.layout.shapes)
        .map(|(g, &s)| g.unwrap_or_else(|| Array2::zeros(s)))
        .collect();
    LossGrad {
        loss,
        tokens,
        grads,
        attention_deviation: tape.attention_deviation(),
    }
}

/// Euclidean norm over all gradient entries, accumulated in f64.
pub fn global_norm<T: Scalar>(grads: &[Array2<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| {
            let x = x.f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Array2<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let k = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * k);
        }
    }
    norm
}

/// One Adam update with bias correction.
pub fn adam_update(params: &mut [Array2<f32>], grads: &[Array2<f32>], opt: &mut OptimizerState, lr: f64) {
    opt.step += 1;
    let t = opt.step as i32;
    let alpha = (lr * (1.0 - BETA2.powi(t)).sqrt() / (1.0 - BETA1.powi(t))) as f32;
    let (b1, b2, eps) = (BETA1 as f32, BETA2 as f32, EPSILON as f32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut opt.m).zip(&mut opt.v) {
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= alpha * *m / (v.sqrt() + eps);
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    /// Mean token negative log likelihood of the batch (before the update).
    pub loss: f64,
    pub tokens: usize,
    pub grad_norm: f64,
    pub clipped_norm: f64,
    pub attention_deviation: f64,
}

/// Forward, backward, clip and Adam update on one batch. `rng` drives dropout.
pub fn train_step(
    params: &mut Seq2SeqParams<f32>,
    opt: &mut OptimizerState,
    batch: &[(&[u32], &[u32])],
    rng: &mut ChaCha8Rng,
) -> Result<StepStats, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut lg = loss_and_grads(params, batch, Some(rng));
    if !lg.loss.is_finite() {
        return Err(TrainError::NonFiniteLoss { step: opt.step + 1 });
    }
    let grad_norm = clip_global_norm(&mut lg.grads, params.config.max_grad_norm);
    let clipped_norm = global_norm(&lg.grads);
    adam_update(&mut params.tensors, &lg.grads, opt, params.config.learning_rate);
    Ok(StepStats {
        step: opt.step,
        loss: lg.loss,
        tokens: lg.tokens,
        grad_norm,
        clipped_norm,
        attention_deviation: lg.attention_deviation,
    })
}
