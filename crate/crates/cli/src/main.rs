mod artifacts;
mod commands;
mod config;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "SRFC_DATA_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "semcap",
    version,
    about = "Attribute- and category-aware product captioning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Label raw JSON-lines records and write a dataset directory.
    Ingest(IngestArgs),
    /// Generate a synthetic labeled corpus.
    Synth(SynthArgs),
    /// Pretrain the caption category classifier.
    PretrainClassifier(ClassifierArgs),
    /// Warm-up and joint training of the captioner.
    Train(TrainArgs),
    /// Greedy captions for one split of a dataset.
    Generate(GenerateArgs),
    /// Per-caption attribute and category rewards.
    Score(ScoreArgs),
    /// Corpus metrics of generated captions.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Raw records, one JSON object per line.
    #[arg(long)]
    input: PathBuf,
    /// Token part-of-speech lexicon (`token<TAB>noun|adj|other`).
    #[arg(long)]
    lexicon: PathBuf,
    /// Category alias map (`from<TAB>to`).
    #[arg(long)]
    aliases: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    min_attr_items: usize,
    #[arg(long, default_value_t = 200)]
    min_cat_items: usize,
    /// Minimum training-caption count of a vocabulary word.
    #[arg(long, default_value_t = 5)]
    min_count: usize,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = config::parse_split)]
    split: [f64; 3],
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory [default: $SRFC_DATA_DIR].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON file with `corpus`, `split` and `min_count`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    categories: Option<usize>,
    #[arg(long)]
    attributes: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long, value_parser = config::parse_split)]
    split: Option<[f64; 3]>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output dataset directory [default: $SRFC_DATA_DIR].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClassifierArgs {
    /// JSON file with `embed_dim`, `filters`, `dropout` and `train`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory [default: $SRFC_DATA_DIR].
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON file with `model` dimensions and `train` settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory [default: $SRFC_DATA_DIR].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Pretrained classifier checkpoint.
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sets every model dimension.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    joint_lr: Option<f64>,
    #[arg(long)]
    rl_weight: Option<f64>,
    #[arg(long)]
    attr_weight: Option<f64>,
    #[arg(long)]
    als_weight: Option<f64>,
    #[arg(long)]
    sls_weight: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_warmup_epochs: Option<usize>,
    #[arg(long)]
    joint_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Dataset directory [default: $SRFC_DATA_DIR].
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// `train`, `val` or `test`.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 25)]
    max_len: usize,
    /// Generated captions (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Also write the split's reference captions here.
    #[arg(long)]
    refs: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Attribute vocabulary file.
    #[arg(long)]
    attributes: PathBuf,
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    als_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    sls_weight: f64,
    /// Report file (JSON lines) [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long)]
    r#ref: PathBuf,
    #[arg(long)]
    attributes: PathBuf,
    #[arg(long)]
    classifier: PathBuf,
    /// Report file (JSON) [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bar chart of the metrics (SVG).
    #[arg(long)]
    plot: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Synth(a) => commands::synth(a),
        Command::PretrainClassifier(a) => commands::pretrain_classifier(a),
        Command::Train(a) => commands::train(a),
        Command::Generate(a) => commands::generate(a),
        Command::Score(a) => commands::score(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
