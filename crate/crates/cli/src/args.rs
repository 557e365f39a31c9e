use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xmap_core::knn::Metric;

/// Map natural-language descriptions into code-embedding space and search it.
///
/// Set XMAP_LOG=error|info|debug to control diagnostics on stderr.
#[derive(Debug, Parser)]
#[command(name = "xmap", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed the doc or code field of a corpus into an EMB1 file.
    Embed(EmbedArgs),
    /// Write a seeded train/valid/test split of corpus ids.
    Split(SplitArgs),
    /// Train a mapper from NL vectors to code vectors.
    Train(TrainArgs),
    /// Build an IDX1 search index over code vectors.
    Index(IndexArgs),
    /// Search an index with a text query or an NL vector.
    Search(SearchArgs),
    /// Mean reciprocal rank on the test split with sampled distractors.
    Eval(EvalArgs),
    /// Expected MRR of a uniformly random ranking.
    Baseline(BaselineArgs),
    /// Pearson correlation between manual scores and embedding distances.
    Correlate(CorrelateArgs),
    /// Sample low-distance pairs for manual rating.
    SamplePairs(SamplePairsArgs),
    /// Run the HTTP search service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Field {
    Doc,
    Code,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Corpus JSONL.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum)]
    pub field: Field,
    /// Vector dimension (the external model's declared dimension when --endpoint is set).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    /// Hash embedder seed.
    #[arg(long, default_value_t = 0, conflicts_with = "endpoint")]
    pub seed: u64,
    /// External embedding service base URL.
    #[arg(long, requires = "model")]
    pub endpoint: Option<String>,
    /// External model name.
    #[arg(long, requires = "endpoint")]
    pub model: Option<String>,
    /// Texts per request to the external service.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    /// External request timeout in seconds.
    #[arg(long, default_value_t = 120, value_parser = clap::value_parser!(u64).range(1..))]
    pub timeout_secs: u64,
    /// Output EMB1 path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train: f64,
    #[arg(long, default_value_t = 0.1)]
    pub valid: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output split JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub nl_emb: PathBuf,
    #[arg(long)]
    pub code_emb: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Output MAP1 path; the training report goes to <OUT_MODEL>.report.json.
    #[arg(long)]
    pub out_model: PathBuf,
    /// Comma-separated hidden layer widths.
    #[arg(long, default_value = "1280,896", value_delimiter = ',')]
    pub hidden: Vec<usize>,
    /// Expected NL vector dimension; checked against --nl-emb.
    #[arg(long)]
    pub input_dim: Option<usize>,
    /// Expected code vector dimension; checked against --code-emb.
    #[arg(long)]
    pub output_dim: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,
    /// Batch size; in-batch negatives need at least 2.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(2..))]
    pub batch: u64,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_epochs: u64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Corpus JSONL; line i names row i of --code-emb.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub code_emb: PathBuf,
    #[arg(long, default_value_t = Metric::SquaredL2)]
    pub metric: Metric,
    /// Output IDX1 path.
    #[arg(long)]
    pub out: PathBuf,
}

/// How text queries are embedded. Defaults to the hash embedder at the
/// model's input dimension.
#[derive(Debug, Args)]
pub struct QueryEmbedderArgs {
    /// Hash embedder seed.
    #[arg(long, default_value_t = 0, conflicts_with = "endpoint")]
    pub embed_seed: u64,
    /// External embedding service base URL.
    #[arg(long, requires = "embed_model")]
    pub endpoint: Option<String>,
    /// External model name.
    #[arg(long, requires = "endpoint")]
    pub embed_model: Option<String>,
    /// External request timeout in seconds.
    #[arg(long, default_value_t = 120, value_parser = clap::value_parser!(u64).range(1..))]
    pub embed_timeout_secs: u64,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// MAP1 model.
    #[arg(long)]
    pub model: PathBuf,
    /// IDX1 index.
    #[arg(long)]
    pub index: PathBuf,
    /// Corpus JSONL with the indexed items' doc and code text.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, required_unless_present = "query_vec", conflicts_with = "query_vec")]
    pub query_text: Option<String>,
    /// NL vector as comma-separated numbers or a JSON array.
    #[arg(long, allow_hyphen_values = true)]
    pub query_vec: Option<String>,
    /// Number of hits.
    #[arg(short = 'n', long = "top", default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[command(flatten)]
    pub embedder: QueryEmbedderArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub nl_emb: PathBuf,
    #[arg(long)]
    pub code_emb: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Distractors per query, drawn from the test split.
    #[arg(long, default_value_t = 999)]
    pub distractors: usize,
    /// Evaluate only the first N test ids (sorted).
    #[arg(long)]
    pub max_queries: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = Metric::SquaredL2)]
    pub metric: Metric,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also print the random-ranking baseline.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Candidates per query (true item plus distractors).
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub candidates: u64,
}

/// Row ids for an EMB1 file: either a plain list or a corpus.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct IdSource {
    /// Text file with one id per line, matching EMB1 rows.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    /// Corpus JSONL whose lines match EMB1 rows.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// CSV with header id_a,id_b,score.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub emb: PathBuf,
    #[command(flatten)]
    pub rows: IdSource,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SamplePairsArgs {
    #[arg(long)]
    pub emb: PathBuf,
    #[command(flatten)]
    pub rows: IdSource,
    #[arg(long, default_value_t = 150, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    /// Output CSV with header id_a,id_b,distance.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_n: u64,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub timeout_secs: u64,
    #[command(flatten)]
    pub embedder: QueryEmbedderArgs,
}
