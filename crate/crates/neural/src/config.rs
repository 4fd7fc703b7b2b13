use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("dropout_keep must be in (0, 1], got {0}")]
    DropoutKeep(f64),
    #[error("special token ids must be below vocab_size")]
    SpecialIds,
}

/// Model and training hyperparameters. The defaults are the full-scale
/// settings; `vocab_size` comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seq2SeqConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    /// LSTM state size in both encoder directions and the decoder.
    pub hidden_dim: usize,
    /// Bidirectional layers.
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_dim: usize,
    pub dropout_keep: f64,
    /// Also drop out token embeddings (off by default).
    pub embedding_dropout: bool,
    pub max_seq_len: usize,
    pub max_decode_len: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub rng_seed: u64,
    pub pad_id: u32,
    pub bos_id: u32,
    pub eos_id: u32,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Seq2SeqConfig {
            vocab_size: 0,
            embedding_dim: 512,
            hidden_dim: 512,
            encoder_layers: 2,
            decoder_layers: 4,
            attention_dim: 512,
            dropout_keep: 0.8,
            embedding_dropout: false,
            max_seq_len: 140,
            max_decode_len: 140,
            batch_size: 32,
            learning_rate: 1e-4,
            max_grad_norm: 5.0,
            rng_seed: 0,
            pad_id: 0,
            bos_id: 2,
            eos_id: 3,
        }
    }
}

impl Seq2SeqConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embedding_dim", self.embedding_dim),
            ("hidden_dim", self.hidden_dim),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("attention_dim", self.attention_dim),
            ("max_seq_len", self.max_seq_len),
            ("max_decode_len", self.max_decode_len),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::NonPositive(name));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ConfigError::NonPositive("learning_rate"));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(ConfigError::NonPositive("max_grad_norm"));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(ConfigError::DropoutKeep(self.dropout_keep));
        }
        let v = self.vocab_size as u32;
        if self.pad_id >= v || self.bos_id >= v || self.eos_id >= v {
            return Err(ConfigError::SpecialIds);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_full_scale() {
        let c = Seq2SeqConfig::default();
        assert_eq!(
            (c.embedding_dim, c.encoder_layers, c.decoder_layers, c.attention_dim),
            (512, 2, 4, 512)
        );
        assert_eq!(
            (c.dropout_keep, c.batch_size, c.learning_rate, c.max_grad_norm),
            (0.8, 32, 1e-4, 5.0)
        );
        assert_eq!((c.max_seq_len, c.max_decode_len), (140, 140));
    }

    #[test]
    fn validation() {
        let ok = Seq2SeqConfig {
            vocab_size: 40,
            ..Default::default()
        };
        assert_eq!(ok.validate(), Ok(()));
        let bad = Seq2SeqConfig {
            dropout_keep: 0.0,
            ..ok.clone()
        };
        assert_eq!(bad.validate(), Err(ConfigError::DropoutKeep(0.0)));
        let bad = Seq2SeqConfig {
            hidden_dim: 0,
            ..ok.clone()
        };
        assert_eq!(bad.validate(), Err(ConfigError::NonPositive("hidden_dim")));
        let bad = Seq2SeqConfig { vocab_size: 3, ..ok };
        assert_eq!(bad.validate(), Err(ConfigError::SpecialIds));
    }

    #[test]
    fn partial_json_takes_defaults() {
        let c: Seq2SeqConfig = serde_json::from_str(r#"{"vocab_size": 20, "hidden_dim": 64}"#).unwrap();
        assert_eq!(c.hidden_dim, 64);
        assert_eq!(c.embedding_dim, 512);
    }
}
