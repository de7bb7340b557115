//! `acg` command-line entry point.

mod commands;
mod repl;

use std::path::PathBuf;
use std::process::ExitCode;

use acg::AcgError;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "acg", version, about = "Session-based query suggestion with a copy/generate decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Segment a raw log into sessions, split it and build the vocabulary.
    Preprocess(PreprocessArgs),
    /// Train a model and write checkpoints and a loss curve.
    Train(TrainArgs),
    /// Print suggestions for session contexts as JSON lines.
    Suggest(SuggestArgs),
    /// Score candidate queries against their contexts (TSV).
    Score(ScoreArgs),
    /// Compute evaluation metrics and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Inject noise into a session file.
    Perturb(PerturbArgs),
    /// Interactive suggestions while typing a session.
    Repl(ReplArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Vocabulary file written by `preprocess`.
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    /// Beam size.
    #[arg(long, default_value_t = 4)]
    beam: usize,
    /// Maximum tokens per suggestion, terminator included.
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    /// Rank hypotheses by mean token log probability.
    #[arg(long)]
    length_normalize: bool,
    /// Context token budget; the oldest queries are dropped first.
    #[arg(long, default_value_t = 50)]
    max_context_tokens: usize,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Log file: `user_id<TAB>query<TAB>timestamp`.
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 90_000)]
    vocab_size: usize,
    /// Fraction of sessions (in time order) used for training.
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    /// Fraction reserved for the learning-to-rank split.
    #[arg(long, default_value_t = 0.1)]
    l2r_frac: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training sessions.
    #[arg(long)]
    sessions: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Validation sessions; defaults to the training file.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// `key = value` run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints and `loss.csv`.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Train the generator only.
    #[arg(long)]
    no_copy: bool,
    /// Use only the full context of each session, not every prefix.
    #[arg(long)]
    last_only: bool,
    /// Per-example gradients on all cores (results are identical).
    #[arg(long)]
    parallel: bool,
}

#[derive(Args, Debug)]
struct SuggestArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Context sessions, one per line with queries separated by tabs; stdin when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Number of suggestions decoded along the best path.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Write per-step attention weights of each top suggestion here (JSON lines).
    #[arg(long)]
    attention_trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Lines of context queries and a final candidate, all tab separated.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, default_value_t = 50)]
    max_context_tokens: usize,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Model checkpoint; generates a suggestion per test session.
    #[arg(long, requires = "vocab")]
    model: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Test sessions (last query is the target).
    #[arg(long)]
    sessions: Option<PathBuf>,
    /// User ids and timestamps for `--sessions` (needed for session noise).
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Pre-generated queries, one per line, aligned with `--targets`.
    #[arg(long, requires = "targets", conflicts_with = "model")]
    generated: Option<PathBuf>,
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Training sessions: MPS candidates for MRR and noise resources.
    #[arg(long)]
    train_sessions: Option<PathBuf>,
    #[arg(long)]
    train_meta: Option<PathBuf>,
    /// Word embeddings for sim_emb (`count dim` header).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Document corpus for sim_ret (`doc_id<TAB>text`).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Metrics to compute: per, sim_emb, sim_ret, mrr.
    #[arg(long = "metric", value_delimiter = ',')]
    metrics: Vec<String>,
    /// Keep only one session-length bucket: short, medium or long.
    #[arg(long)]
    bucket: Option<String>,
    /// Perturb the test sessions first: term, query or session.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2500.0)]
    mu: f64,
    #[arg(long, default_value_t = 0.9)]
    rbo_p: f64,
    #[arg(long, default_value_t = 100)]
    rbo_depth: usize,
    #[arg(long)]
    rbo_extrapolate: bool,
    #[arg(long, default_value_t = 20)]
    mps_k: usize,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PerturbArgs {
    #[arg(long)]
    sessions: PathBuf,
    #[arg(long)]
    meta: Option<PathBuf>,
    /// term, query or session.
    #[arg(long)]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sessions to draw noise terms and queries from; defaults to the input.
    #[arg(long)]
    resources: Option<PathBuf>,
    /// Output session file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output meta sidecar.
    #[arg(long)]
    out_meta: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Alternative suggestions shown after each query (best beam hypotheses).
    #[arg(long, default_value_t = 3)]
    k: usize,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(AcgError),
}

impl From<AcgError> for CliError {
    fn from(e: AcgError) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                AcgError::InvalidArgument(_) | AcgError::MissingResource(_) => 2,
                AcgError::Io(_) => 2,
                AcgError::Checkpoint(_) | AcgError::Dimension { .. } => 4,
                AcgError::NonFinite(_) => 5,
                _ => 3,
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Suggest(a) => commands::suggest(a),
        Command::Score(a) => commands::score(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Perturb(a) => commands::perturb(a),
        Command::Repl(a) => repl::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("acg: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
