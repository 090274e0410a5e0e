//! `choir`: ingest, augment, train, generate, evaluate and inspect four-part
//! chorale models.

mod commands;
mod corpus;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "choir", version, about = "Four-part chorale harmonization with a relative-attention transformer")]
pub struct Cli {
    /// Log progress to standard error (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read a directory of MIDI or JSON chorales into a token corpus.
    Ingest(IngestArgs),
    /// Expand a corpus by transposition and/or retrograde.
    Augment(AugmentArgs),
    /// Train a model (or the ablation ladder) on a corpus.
    Train(Box<TrainArgs>),
    /// Harmonize a chord + soprano conditioning file.
    Generate(GenerateArgs),
    /// Harmonic metrics and token error rate for a corpus.
    Evaluate(EvaluateArgs),
    /// Per-layer mean attention distance for one piece.
    AnalyzeAttention(AttentionArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    /// Order tracks by mean pitch, highest first.
    MeanPitch,
    /// Keep the file's track order.
    TrackOrder,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Directory of .mid/.midi/.json files.
    input: PathBuf,
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    /// How MIDI tracks are mapped to S, A, T, B.
    #[arg(long, value_enum, default_value = "mean-pitch")]
    voice_policy: PolicyArg,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    /// Corpus directory, directory of chorale files, or a single file.
    input: PathBuf,
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    /// Add the eleven other keys.
    #[arg(long)]
    transpose: bool,
    /// Add the retrograde of every piece.
    #[arg(long)]
    reverse: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Unaugmented corpus (augmentation follows the switches).
    corpus: PathBuf,
    /// Output directory for checkpoints, metrics log and config.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with [model] and [train] tables; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train the five-row ablation ladder and write ablation.csv.
    #[arg(long)]
    ablation: bool,
    /// Continue from last.ckpt in the output directory.
    #[arg(long, conflicts_with = "ablation")]
    resume: bool,
    /// Total optimizer steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Windows per optimizer step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Tokens per training window.
    #[arg(long)]
    crop_len: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Linear warmup steps before inverse-square-root decay (0: constant rate).
    #[arg(long)]
    warmup: Option<u64>,
    /// Steps between validation passes and log rows.
    #[arg(long)]
    log_every: Option<u64>,
    /// Share of pieces held out for validation, in (0, 1).
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Seed for initialization, data order and dropout.
    #[arg(long)]
    seed: Option<u64>,
    /// Model width.
    #[arg(long)]
    d_model: Option<usize>,
    /// Attention heads per layer.
    #[arg(long)]
    heads: Option<usize>,
    /// Number of layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Hidden width of the feed-forward sublayer.
    #[arg(long)]
    d_ff: Option<usize>,
    /// Longest token sequence the model accepts.
    #[arg(long)]
    max_len: Option<usize>,
    /// Relative distances are clipped to this many positions.
    #[arg(long)]
    max_rel_dist: Option<usize>,
    /// Residual dropout rate.
    #[arg(long)]
    dropout: Option<f64>,
    /// Put a chord token in front of every step.
    #[arg(long, value_name = "BOOL")]
    chord_tokens: Option<bool>,
    /// Learned relative-position term in attention.
    #[arg(long, value_name = "BOOL")]
    relative_attention: Option<bool>,
    /// Transposition augmentation of the training split.
    #[arg(long, value_name = "BOOL")]
    transpose_aug: Option<bool>,
    /// Retrograde augmentation of the training split.
    #[arg(long, value_name = "BOOL")]
    reverse_aug: Option<bool>,
    /// Add the absolute sinusoidal encoding.
    #[arg(long, value_name = "BOOL")]
    absolute_pe: Option<bool>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Greedy,
    Temperature,
    TopK,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Model checkpoint (best.ckpt or last.ckpt).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Chorale JSON whose chords and soprano are kept; A, T, B may be null.
    #[arg(long)]
    conditioning: PathBuf,
    /// Output directory for the .json, .mid and .csv renderings.
    #[arg(long)]
    out: PathBuf,
    /// Decoding strategy.
    #[arg(long, value_enum, default_value = "top-k")]
    mode: ModeArg,
    /// Softmax temperature for temperature and top-k sampling.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Candidates kept by top-k sampling.
    #[arg(long, default_value_t = 16)]
    top_k: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VoiceArg {
    S,
    A,
    T,
    B,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Pieces to evaluate (corpus directory, chorale directory or file).
    #[arg(long)]
    against: PathBuf,
    /// Corpus whose metric means are compared against.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Model for the token error rate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Voice used as the melody.
    #[arg(long, value_enum, default_value = "s")]
    voice: VoiceArg,
    /// Output directory for report.csv and comparison.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AttentionArgs {
    /// Model checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Chorale JSON or MIDI file.
    #[arg(long)]
    piece: PathBuf,
    /// CSV file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(choir_core::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<choir_core::Error> for CliError {
    fn from(e: choir_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(choir_core::Error::Config(_)) => 1,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(_) => 2,
        }
    }
}

fn run(args: impl IntoIterator<Item = OsString>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Augment(a) => commands::augment(a),
        Command::Train(a) => commands::train(*a),
        Command::Generate(a) => commands::generate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::AnalyzeAttention(a) => commands::analyze_attention(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
