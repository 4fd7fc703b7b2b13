use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use retroseq_cli::commands::{self, predictions_path, split_path, ModelKind};
use retroseq_cli::config::{Overrides, RunConfig};
use retroseq_core::data::read_jsonl;
use retroseq_core::data::ProcessedRecord;
use retroseq_core::eval::Example;

#[derive(Parser)]
#[command(
    name = "retroseq",
    version,
    about = "Retrosynthesis prediction: template baseline and seq2seq model"
)]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Tab-separated reaction dataset (id, class, reaction SMILES)
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Run directory shared by all stages
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the split and the model
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    beam_width: Option<usize>,
    /// Worker threads (1 keeps everything sequential)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Reject atoms above their maximum valence instead of warning
    #[arg(long, global = true)]
    strict_valence: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split, filter, tokenize and write the train/valid/test files
    Preprocess,
    /// Extract validated templates from the training split
    ExtractRules,
    /// Train the seq2seq model
    Train,
    /// Ranked reactant predictions for the test split or one target
    Predict {
        #[arg(long, value_enum)]
        model: ModelKind,
        /// Processed records to predict (default: the test split)
        #[arg(long, conflicts_with = "target")]
        input: Option<PathBuf>,
        /// Single product SMILES; needs --class
        #[arg(long, requires = "class")]
        target: Option<String>,
        /// Reaction class of --target, or a filter on the input records
        #[arg(long)]
        class: Option<u8>,
        /// Output file (default: predictions_<model>.jsonl in the run directory)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score prediction files and write the report tables
    Evaluate {
        /// `model=path` pairs (default: every predictions_<model>.jsonl present)
        #[arg(long = "predictions")]
        predictions: Vec<String>,
        /// Ground-truth records (default: the test split)
        #[arg(long)]
        input: Option<PathBuf>,
        /// Report directory (default: report/ in the run directory)
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Write a synthetic mapped-reaction dataset
    Synth {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Output file (default: stdout)
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn read_records(path: &std::path::Path) -> Result<Vec<ProcessedRecord>> {
    read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        dataset: cli.dataset,
        out: cli.out,
        seed: cli.seed,
        beam_width: cli.beam_width,
        workers: cli.workers,
        strict_valence: cli.strict_valence,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .context("starting worker pool")?;
    match cli.command {
        Command::Preprocess => {
            let r = commands::preprocess(&cfg)?;
            info!("kept {} reactions, splits {:?}", r.kept, r.split_sizes);
        }
        Command::ExtractRules => {
            commands::extract_rules(&cfg)?;
        }
        Command::Train => {
            let s = commands::train(&cfg)?;
            info!("{} steps, best at step {}", s.steps, s.best_step);
        }
        Command::Predict {
            model,
            input,
            target,
            class,
            output,
        } => {
            if let Some(smiles) = target {
                let t = commands::single_target(&smiles, class.expect("clap enforces --class"), &cfg)?;
                let preds = commands::predict(&cfg, model, &[t])?;
                let mut stdout = std::io::stdout().lock();
                match output {
                    Some(p) => commands::write_predictions(&p, &preds)?,
                    None => writeln!(stdout, "{}", serde_json::to_string(&preds[0])?)?,
                }
                return Ok(());
            }
            let input = input.unwrap_or_else(|| split_path(&cfg.out, "test"));
            let targets = commands::targets_from_records(&read_records(&input)?, class);
            let preds = commands::predict(&cfg, model, &targets)?;
            let path = output.unwrap_or_else(|| predictions_path(&cfg.out, model));
            commands::write_predictions(&path, &preds)?;
            info!("wrote {} predictions to {}", preds.len(), path.display());
        }
        Command::Evaluate {
            predictions,
            input,
            report_dir,
        } => {
            let input = input.unwrap_or_else(|| split_path(&cfg.out, "test"));
            let examples: Vec<Example> = read_records(&input)?.iter().map(Example::from).collect();
            let mut files = Vec::new();
            for p in predictions {
                match p.split_once('=') {
                    Some((m, path)) => files.push((m.to_string(), PathBuf::from(path))),
                    None => bail!("expected model=path, got {p:?}"),
                }
            }
            if files.is_empty() {
                for m in [ModelKind::Baseline, ModelKind::Seq2seq] {
                    let p = predictions_path(&cfg.out, m);
                    if p.exists() {
                        files.push((m.name().to_string(), p));
                    }
                }
            }
            if files.is_empty() {
                bail!("no prediction files found in {}", cfg.out.display());
            }
            let dir = report_dir.unwrap_or_else(|| cfg.out.join("report"));
            commands::evaluate(&cfg, &examples, &files, &dir)?;
            info!("reports written to {}", dir.display());
        }
        Command::Synth { count, output } => {
            let tsv = commands::synthesize(count, cli.seed.unwrap_or(0));
            match output {
                Some(p) => std::fs::write(&p, tsv).with_context(|| format!("writing {}", p.display()))?,
                None => std::io::stdout().lock().write_all(tsv.as_bytes())?,
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
