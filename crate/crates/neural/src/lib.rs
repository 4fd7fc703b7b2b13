//! Character-level sequence-to-sequence model: bidirectional LSTM encoder,
//! stacked LSTM decoder with additive attention and input feeding, Adam
//! training with global-norm clipping, and beam search.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod model;
pub mod optim;
pub mod tape;
pub mod train;

pub use checkpoint::{expect_vocab, load_checkpoint, save_checkpoint, CheckpointError};
pub use config::{ConfigError, Seq2SeqConfig};
pub use decode::{beam_decode, greedy_decode, greedy_decode_batch, BeamHypothesis};
pub use model::{attend, decode_step, encode, init_params, sequence_loss, Seq2SeqParams};
pub use optim::{init_model, train_step, OptimizerState, StepStats, TrainError};
pub use train::{fit, perplexity, EarlyStopping, EvalRow, FitOptions, FitResult, Pair};
