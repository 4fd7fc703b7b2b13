//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use retroseq_core::chem::ParseOptions;
use retroseq_core::data::{SplitSpec, TrivialFilter};
use retroseq_core::eval::TOP_NS;
use retroseq_neural::{FitOptions, Seq2SeqConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    pub split: SplitSpec,
    pub trivial: TrivialFilter,
    /// Overrides on top of the default model hyperparameters; `vocab_size`
    /// is always taken from the vocabulary.
    pub model: Seq2SeqConfig,
    pub training: FitOptions,
    pub beam_width: usize,
    /// Cap on baseline candidates per target; all of them when absent.
    pub baseline_candidates: Option<usize>,
    pub eval_ns: Vec<usize>,
    pub strict_valence: bool,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            out: PathBuf::from("run"),
            split: SplitSpec::default(),
            trivial: TrivialFilter::default(),
            model: Seq2SeqConfig::default(),
            training: FitOptions::default(),
            beam_width: 50,
            baseline_candidates: None,
            eval_ns: TOP_NS.to_vec(),
            strict_valence: false,
            workers: 1,
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub beam_width: Option<usize>,
    pub workers: Option<usize>,
    pub strict_valence: bool,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(d) = &o.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(d) = &o.out {
            cfg.out = d.clone();
        }
        if let Some(s) = o.seed {
            cfg.split.seed = s;
            cfg.model.rng_seed = s;
        }
        if let Some(w) = o.beam_width {
            cfg.beam_width = w;
        }
        if let Some(w) = o.workers {
            cfg.workers = w;
        }
        cfg.strict_valence |= o.strict_valence;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.split
            .validate()
            .context("split ratios must be positive and sum to 1")?;
        if self.eval_ns.is_empty() || self.eval_ns.contains(&0) {
            bail!("eval_ns must be a non-empty list of positive cut-offs");
        }
        let max_n = self.eval_ns.iter().copied().max().unwrap_or(0);
        if self.beam_width < max_n {
            bail!(
                "beam width {} is below the largest evaluation cut-off {max_n}",
                self.beam_width
            );
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        // vocab_size is filled in later; check the rest now
        let probe = Seq2SeqConfig {
            vocab_size: self.model.vocab_size.max(14),
            ..self.model.clone()
        };
        probe.validate().context("invalid model config")?;
        Ok(())
    }

    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            strict_valence: self.strict_valence,
        }
    }

    pub fn dataset(&self) -> Result<&Path> {
        match &self.dataset {
            Some(p) => Ok(p),
            None => bail!("no dataset given (use --dataset or `dataset` in the config)"),
        }
    }
}
