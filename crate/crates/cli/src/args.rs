use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "gaussq", version, about = "Gaussian-density embeddings for logical queries over knowledge graphs")]
pub struct Cli {
    /// Directory that relative input and output paths are resolved against.
    #[arg(long, global = true, env = "GAUSSQ_DATA_DIR", default_value = ".")]
    pub data_dir: PathBuf,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read train/valid/test TSV files into a graph snapshot.
    Ingest(IngestArgs),
    /// Write a seeded synthetic graph with a planted group hierarchy.
    Synth(SynthArgs),
    /// Draw a query workload from a graph snapshot.
    Sample(SampleArgs),
    /// Train embeddings on query workloads.
    Train(TrainArgs),
    /// Score a checkpoint on a query workload.
    Eval(EvalArgs),
    /// Rank entities for one query given in text form.
    Answer(AnswerArgs),
    /// Export 2-D projections of entities and queries for plotting.
    ExportViz(ExportVizArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory holding train.txt, valid.txt and test.txt (tab-separated).
    #[arg(long, conflicts_with_all = ["train", "valid", "test"])]
    pub dir: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Snapshot to write.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub entities: usize,
    #[arg(long, default_value_t = 5)]
    pub relations: usize,
    #[arg(long, default_value_t = 4)]
    pub group_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// Answers over training edges.
    Train,
    /// Answers over train+valid edges, each query needing a valid-only answer.
    Valid,
    /// Answers over all edges, each query needing a test-only answer.
    Test,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, short)]
    pub graph: PathBuf,
    /// Comma-separated query types (1t,2t,3t,2i,3i,2u,it,ti,ut) or `all`.
    #[arg(long, default_value = "all")]
    pub types: String,
    /// Queries per type.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    /// Skip queries with more answers than this.
    #[arg(long)]
    pub max_answers: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
}

/// Training hyperparameters. Unset flags fall back to the config file, then
/// to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct HyperArgs {
    /// TOML file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Comma-separated query types to train on, or `all`.
    #[arg(long)]
    pub types: Option<String>,
    /// attention, average or mlp.
    #[arg(long)]
    pub aggregator: Option<String>,
    /// sgd or adam.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// negative-sampling or positive-only.
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, short)]
    pub graph: PathBuf,
    /// Training workload (JSON lines).
    #[arg(long)]
    pub queries: PathBuf,
    /// Validation workload used for early stopping.
    #[arg(long)]
    pub valid_queries: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Per-epoch metrics log; defaults to `<out>.metrics.jsonl`.
    #[arg(long)]
    pub metrics_log: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, short)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Graph snapshot to check the checkpoint's vocabulary against.
    #[arg(long, short)]
    pub graph: Option<PathBuf>,
    /// Conventional filtered per-answer ranks instead of the default
    /// precision-style metrics.
    #[arg(long)]
    pub filtered_metrics: bool,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Report prefix; writes `<out>.json` and `<out>.txt`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnswerArgs {
    #[arg(long, short)]
    pub checkpoint: PathBuf,
    /// Query text, e.g. "((a r1) & (b r2))".
    #[arg(long, short)]
    pub query: String,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct ExportVizArgs {
    #[arg(long, short)]
    pub checkpoint: PathBuf,
    /// Entity to include (repeatable).
    #[arg(long = "entity")]
    pub entities: Vec<String>,
    /// Query to include, one row per mixture component (repeatable).
    #[arg(long = "query")]
    pub queries: Vec<String>,
    /// Output prefix; writes `<out>.csv` and `<out>.json`.
    #[arg(long, short)]
    pub out: PathBuf,
}
