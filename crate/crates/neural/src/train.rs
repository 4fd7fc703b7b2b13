//! Training loop with periodic validation and perplexity-based early stopping.

use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{corpus_nll, Seq2SeqParams};
use crate::optim::{train_step, OptimizerState, StepStats, TrainError};

/// A tokenized `(source, target)` pair; the target ends with EOS.
pub type Pair = (Vec<u32>, Vec<u32>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_steps: u64,
    pub eval_interval: u64,
    /// Consecutive worsening evaluations tolerated before stopping.
    pub patience: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_steps: 200_000,
            eval_interval: 4000,
            patience: 1,
        }
    }
}

/// Stops once validation perplexity has risen `patience` evaluations in a
/// row, each compared with the one before it.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    previous: Option<f64>,
    worse: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience: patience.max(1),
            previous: None,
            worse: 0,
        }
    }

    /// Records one evaluation; true means stop.
    pub fn observe(&mut self, perplexity: f64) -> bool {
        if self.previous.is_some_and(|p| perplexity > p) {
            self.worse += 1;
        } else {
            self.worse = 0;
        }
        self.previous = Some(perplexity);
        self.worse >= self.patience
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: u64,
    /// Mean batch loss since the previous evaluation.
    pub train_loss: f64,
    pub valid_perplexity: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters at the evaluation with the lowest validation perplexity, or
    /// the final parameters when no evaluation ran.
    pub best: Seq2SeqParams<f32>,
    pub best_step: u64,
    pub best_perplexity: Option<f64>,
    pub last: Seq2SeqParams<f32>,
    pub steps: u64,
    pub evaluations: Vec<EvalRow>,
    pub stopped_early: bool,
}

/// Validation perplexity: `exp` of the mean token negative log likelihood.
pub fn perplexity(params: &Seq2SeqParams<f32>, pairs: &[Pair]) -> f64 {
    let refs: Vec<(&[u32], &[u32])> = pairs.iter().map(|(s, t)| (s.as_slice(), t.as_slice())).collect();
    let (sum, n) = corpus_nll(params, &refs, params.config.batch_size);
    (sum / n.max(1) as f64).exp()
}

/// Trains on shuffled mini-batches of `train` (reshuffled every epoch) and
/// evaluates on `valid` every `eval_interval` steps. `on_step` sees every
/// step's statistics and the updated parameters, and can end training early
/// by returning `Break`. Batch order and dropout come from one ChaCha8 stream
/// seeded from the config, so reruns are identical.
pub fn fit(
    mut params: Seq2SeqParams<f32>,
    opt: &mut OptimizerState,
    train: &[Pair],
    valid: &[Pair],
    opts: &FitOptions,
    mut on_step: impl FnMut(&StepStats, &Seq2SeqParams<f32>) -> ControlFlow<()>,
) -> Result<FitResult, TrainError> {
    params.config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.config.rng_seed.wrapping_add(1));
    let bs = params.config.batch_size;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut stopper = EarlyStopping::new(opts.patience);
    let mut best: Option<(Seq2SeqParams<f32>, u64, f64)> = None;
    let mut evaluations = Vec::new();
    let mut since_eval = (0.0, 0usize);
    let mut steps = 0;
    let mut stopped_early = false;
    while steps < opts.max_steps && !train.is_empty() {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + bs).min(order.len());
        let batch: Vec<(&[u32], &[u32])> = order[cursor..end]
            .iter()
            .map(|&i| (train[i].0.as_slice(), train[i].1.as_slice()))
            .collect();
        cursor = end;
        let stats = train_step(&mut params, opt, &batch, &mut rng)?;
        steps += 1;
        since_eval.0 += stats.loss;
        since_eval.1 += 1;
        let halt = on_step(&stats, &params).is_break();
        if opts.eval_interval > 0 && steps % opts.eval_interval == 0 && !valid.is_empty() {
            let ppl = perplexity(&params, valid);
            log::info!("step {steps}: valid perplexity {ppl:.4}");
            evaluations.push(EvalRow {
                step: steps,
                train_loss: since_eval.0 / since_eval.1 as f64,
                valid_perplexity: ppl,
            });
            since_eval = (0.0, 0);
            if best.as_ref().is_none_or(|b| ppl < b.2) {
                best = Some((params.clone(), steps, ppl));
            }
            if stopper.observe(ppl) {
                stopped_early = true;
                break;
            }
        }
        if halt {
            break;
        }
    }
    let (best_params, best_step, best_ppl) = match best {
        Some((p, s, ppl)) => (p, s, Some(ppl)),
        None => (params.clone(), steps, None),
    };
    Ok(FitResult {
        best: best_params,
        best_step,
        best_perplexity: best_ppl,
        last: params,
        steps,
        evaluations,
        stopped_early,
    })
}
