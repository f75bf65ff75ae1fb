use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "hubtext",
    version,
    about = "Search for a single text that an evaluation metric scores highly for every input"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hub training, decoding and local search, then evaluation on tune and test.
    Pipeline(StepArgs),
    /// Step 1: gradient ascent on the hub embedding; writes checkpoint.json.
    HubTrain(StepArgs),
    /// Step 2: decode checkpoint.json into candidate texts; writes decoded.json.
    HubDecode(DecodeArgs),
    /// Step 3: token replacement search from decoded.json or an explicit text.
    LocalSearch(SearchArgs),
    /// Score a fixed hub text, or per-case baseline hypotheses, on a dataset.
    Evaluate(EvaluateArgs),
    /// Score one hub text on several datasets.
    Transfer(TransferArgs),
    /// Insert a hub score into a system ranking.
    Leaderboard(LeaderboardArgs),
    /// Write a synthetic vocabulary and tune/test corpus.
    MakeToy(MakeToyArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Metric backend: builtin:SEED[:DIM[:HIDDEN]] or remote:URL.
    #[arg(long)]
    pub backend: Option<String>,
    /// Tuning set (JSONL with src and ref fields).
    #[arg(long)]
    pub tune: Option<PathBuf>,
    /// Test set (JSONL with src and ref fields).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Vocabulary file, one token per line. Required by the builtin backend.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Directory for artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Root seed of every random substream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    /// JSON file with defaults for any of these flags. Flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct StepFlags {
    /// Hub training steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Hub training learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decoupled weight decay.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Number of decoded hypotheses.
    #[arg(long)]
    pub hypotheses: Option<usize>,
    /// Beam width of the stochastic decoder.
    #[arg(long)]
    pub beam: Option<usize>,
    /// Maximum decoded length in tokens.
    #[arg(long = "max-len")]
    pub max_len: Option<usize>,
    /// Sampling temperature of the decoder.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Only try the first K non-special tokens during local search.
    #[arg(long = "vocab-limit")]
    pub vocab_limit: Option<usize>,
    /// Local search epoch cap.
    #[arg(long = "max-epochs")]
    pub max_epochs: Option<usize>,
    /// Candidates per scoring batch.
    #[arg(long)]
    pub chunk: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct StepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub step: StepFlags,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub step: StepFlags,
    /// Checkpoint to decode. Defaults to OUT/checkpoint.json.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub step: StepFlags,
    /// Start from this text instead of OUT/decoded.json.
    #[arg(long, conflicts_with = "init_file")]
    pub init: Option<String>,
    /// Start from a decoded.json / result.json file or a plain text file.
    #[arg(long = "init-file")]
    pub init_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Accepted so the provenance hash matches the run that made the hub text.
    #[command(flatten)]
    pub step: StepFlags,
    /// Hub text to score. Defaults to the text in OUT/result.json.
    #[arg(long, conflicts_with = "baselines")]
    pub hyp: Option<String>,
    /// One hypothesis per line, aligned with the dataset's cases.
    #[arg(long)]
    pub baselines: Option<PathBuf>,
    /// Dataset to score on. Defaults to --test, then --tune.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Series label stored in the report.
    #[arg(long, default_value = "evaluate")]
    pub label: String,
    /// Report path. Defaults to OUT/report_<label>.json.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TransferArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Accepted so the provenance hash matches the run that made the hub text.
    #[command(flatten)]
    pub step: StepFlags,
    /// Hub text to score. Defaults to the text in OUT/result.json.
    #[arg(long)]
    pub hyp: Option<String>,
    /// Datasets to score on.
    #[arg(long, num_args = 1.., required = true)]
    pub datasets: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LeaderboardArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// JSON list of {"name": .., "score": ..} objects.
    #[arg(long)]
    pub systems: PathBuf,
    /// Hub score in percent.
    #[arg(
        long,
        conflicts_with = "hub_report",
        required_unless_present = "hub_report"
    )]
    pub hub_score: Option<f64>,
    /// Take the hub score from the mean of a report file.
    #[arg(long = "hub-report")]
    pub hub_report: Option<PathBuf>,
    #[arg(long = "hub-name", default_value = "hub text")]
    pub hub_name: String,
}

#[derive(Debug, Clone, Args)]
pub struct MakeToyArgs {
    /// Output directory for vocab.txt, tune.jsonl and test.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "vocab-size", default_value_t = 64)]
    pub vocab_size: usize,
    #[arg(long = "tune-pairs", default_value_t = 20)]
    pub tune_pairs: usize,
    #[arg(long = "test-pairs", default_value_t = 10)]
    pub test_pairs: usize,
    #[arg(long = "min-len", default_value_t = 3)]
    pub min_len: usize,
    #[arg(long = "max-len", default_value_t = 8)]
    pub max_len: usize,
    /// 0 (lowercase) or 1 (uppercase, disjoint characters).
    #[arg(long, default_value_t = 0)]
    pub language: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
