mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Preset, SplitChoice};

/// Framework-alignment experiments: import, analyze, synthesize, train,
/// evaluate and score.
#[derive(Debug, Parser)]
#[command(name = "moralab", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for corpus generation, sampling and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML or JSON file overriding preset values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub outdir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "toy")]
    pub preset: Preset,
    /// Keyword list (TOML); the built-in list when omitted.
    #[arg(long, global = true)]
    pub keywords: Option<PathBuf>,
    /// Directory that relative input paths fall back to.
    #[arg(long, global = true, env = "MORALAB_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a dataset file into the canonical corpus format.
    Import {
        input: PathBuf,
        /// Field-name and alias profile (TOML or JSON).
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Canonical corpus destination (defaults to <outdir>/corpus.jsonl).
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Keep going past rejected or incomplete records.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Label statistics, φ matrix and overlap of a corpus.
    Analyze {
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        subset: Subset,
    },
    /// Generate a synthetic corpus with a known labeling rule.
    Synth {
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        feature_dim: Option<usize>,
        #[arg(long)]
        rule_seed: Option<u64>,
    },
    /// Filter, split and train a policy toward one framework.
    Train {
        corpus: PathBuf,
        #[arg(long)]
        framework: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        eval_every: Option<usize>,
        #[arg(long, value_enum)]
        split: Option<SplitChoice>,
        /// Skip the disagreement filter.
        #[arg(long)]
        no_filter: bool,
    },
    /// Alignment scores for a checkpoint, a run directory or transcripts.
    Eval {
        /// Checkpoint file or run directory.
        #[arg(long, required_unless_present = "transcripts", conflicts_with = "transcripts")]
        checkpoint: Option<PathBuf>,
        /// Scored externally: line-delimited {scenario_id, completion_text}.
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "ood")]
        scenarios: ScenarioSet,
        #[arg(long, value_enum)]
        backend: Option<BackendChoice>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        /// Evaluate on a corpus other than the one the checkpoint was trained on.
        #[arg(long)]
        allow_foreign_corpus: bool,
    },
    /// Score external completions with the composite reward.
    Score {
        transcripts: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Framework for rows that do not name one.
        #[arg(long)]
        framework: Option<String>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    /// Every scenario.
    Full,
    /// Evaluation side of the configured split.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioSet {
    /// Held-out side of the configured split.
    Ood,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    Exact,
    MonteCarlo,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
