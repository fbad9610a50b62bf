//! `lmpm`: entity abstraction, two-phase training, tree generation,
//! evaluation and memory inspection.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "lmpm", version, about = "Logical-pattern memory for entailment-tree generation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Replace entity spans in raw triples with shared placeholders.
    Abstract(AbstractArgs),
    /// Phase 1: pattern pre-training on a triple corpus.
    Pretrain(PretrainArgs),
    /// Phase 2: fine-tuning on treebank steps.
    Finetune(FinetuneArgs),
    /// Build predicted trees for every tree in a treebank.
    Generate(GenerateArgs),
    /// Score predicted trees against gold trees.
    Evaluate(EvaluateArgs),
    /// Dump per-example slot weights grouped by inference type.
    InspectMemory(InspectArgs),
}

#[derive(Args)]
struct AbstractArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Write corpus statistics here as JSON (default: stdout).
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Copy triples through with only token normalization.
    #[arg(long)]
    no_abstraction: bool,
    /// Extra `word TAG` entries for the tagger.
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

/// Training options shared by both phases. Each overrides the config file.
#[derive(Args, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    temperature_start: Option<f64>,
    #[arg(long)]
    temperature_end: Option<f64>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    no_memory: bool,
    /// Per-step losses as CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Further corpora or treebanks whose words join the vocabulary.
    #[arg(long, num_args = 1..)]
    vocab_extra: Vec<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    /// Abstract records (output of `abstract`) or raw triples.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    no_lpp: bool,
    #[arg(long)]
    no_abstraction: bool,
    #[arg(long)]
    fraction: Option<f64>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    treebank: PathBuf,
    /// Start from this checkpoint; without it a fresh model is built.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    freeze_memory: bool,
    #[arg(long)]
    bow_in_finetune: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Oracle,
    Heuristic,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    treebank: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Oracle)]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Decode without the memory (for models trained with --no-memory).
    #[arg(long)]
    no_memory: bool,
    #[arg(long)]
    w_pair: Option<f64>,
    #[arg(long)]
    w_hyp: Option<f64>,
    #[arg(long)]
    stop_threshold: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Full JSON report (per tree and corpus).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Corpus CSV row with header.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Treebank with step_types, or abstract records with "type".
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Mean weight per (type, slot) as CSV (default: stdout).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Majority-slot purity as JSON.
    #[arg(long)]
    purity: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Abstract(a) => commands::abstract_cmd(a),
        Cmd::Pretrain(a) => commands::pretrain(a),
        Cmd::Finetune(a) => commands::finetune(a),
        Cmd::Generate(a) => commands::generate(a),
        Cmd::Evaluate(a) => commands::evaluate(a),
        Cmd::InspectMemory(a) => commands::inspect(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
