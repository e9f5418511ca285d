use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sonoscan", version, about = "Audit an image dataset for a sensitive category and the private text it carries")]
pub struct Cli {
    /// TOML pipeline config; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every randomized stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker count for parallel stages.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Increase log verbosity (-v, -vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Flag images by query similarity or with a trained classifier.
    Scan(ScanArgs),
    /// Train an SVM, random forest or MLP detector.
    Train(TrainArgs),
    /// Group near-duplicate images and keep one per group.
    Dedup(DedupArgs),
    /// Reduce, cluster and lay out detections; summarize caption themes.
    Cluster(ClusterArgs),
    /// Run OCR over images, or detect entities in recognized text.
    Pii(PiiArgs),
    /// Score detected entities against ground truth.
    Eval(EvalArgs),
    /// Serve the review queue and annotation API.
    Serve(ServeArgs),
    /// List negatives scoring just below the decision boundary.
    BoundaryBand(BandArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScanMode {
    Retrieval,
    Classifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QueryKindArg {
    Image,
    Text,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long, value_enum)]
    pub mode: ScanMode,
    /// Dataset embeddings (EMB1).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Image records (JSONL), one per embedding row.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    /// Query embeddings (EMB1); retrieval mode.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// One label per query row.
    #[arg(long)]
    pub query_labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "image")]
    pub query_kind: QueryKindArg,
    /// Similarity threshold; defaults to 0.7 for image and 0.3 for text queries.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Trained model; classifier mode.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Svm,
    Rf,
    Mlp,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Training embeddings (EMB1).
    #[arg(long)]
    pub train: PathBuf,
    /// Labels for `--train`: one `label` or `id label` per line; default `<train>.labels`.
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long)]
    pub val: PathBuf,
    /// Default `<val>.labels`.
    #[arg(long)]
    pub val_labels: Option<PathBuf>,
    /// Held-out embeddings; training rows too similar to any of them are dropped.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    #[arg(long)]
    pub leakage_theta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Comma-separated regularization grid (svm).
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Comma-separated tree counts (rf).
    #[arg(long, value_delimiter = ',')]
    pub n_trees: Option<Vec<usize>>,
    /// Comma-separated depth limits (rf).
    #[arg(long, value_delimiter = ',')]
    pub max_depth: Option<Vec<usize>>,
    /// Comma-separated hidden layer widths (mlp).
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    /// Restrict to these detections (JSONL).
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Image records with captions.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    /// Restrict to these detections.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Restrict to images kept by this dedup report.
    #[arg(long)]
    pub dedup: Option<PathBuf>,
    #[arg(long)]
    pub min_cluster_size: Option<usize>,
    #[arg(long)]
    pub min_samples: Option<usize>,
    /// Dimensions kept by the linear reduction.
    #[arg(long, default_value_t = 5)]
    pub pca_dim: usize,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub tsne_iterations: usize,
    /// Skip the 2-D layout.
    #[arg(long)]
    pub no_tsne: bool,
    /// Theme words per cluster.
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PiiArgs {
    /// OCR stage: directory of `<image_id>.png|jpg` files.
    #[arg(long, conflicts_with = "text_in")]
    pub images: Option<PathBuf>,
    /// OCR command, invoked as `CMD <image-file>`.
    #[arg(long)]
    pub ocr_cmd: Option<String>,
    /// Correction command, invoked as `CMD <image-file>` with the prompt on stdin.
    #[arg(long)]
    pub correct_cmd: Option<String>,
    /// External upscaler, invoked as `CMD <input> <output>`; bicubic when absent.
    #[arg(long)]
    pub upscale_cmd: Option<String>,
    #[arg(long, default_value_t = 15)]
    pub rotation_step: u32,
    #[arg(long, default_value_t = 90)]
    pub max_angle: u32,
    /// Only OCR images listed in these detections.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Only OCR images kept by this dedup report.
    #[arg(long)]
    pub dedup: Option<PathBuf>,
    /// Entity stage: OCR outcomes or `{image_id, text}` records (JSONL).
    #[arg(long)]
    pub text_in: Option<PathBuf>,
    /// Recognizer spec (TOML); the bundled set when absent.
    #[arg(long)]
    pub recognizers: Option<PathBuf>,
    #[arg(long)]
    pub score_threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detected entities (JSONL from `pii --text-in`).
    #[arg(long)]
    pub detected: PathBuf,
    /// Ground truth: JSONL records or a review-service export.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Dedup report for the unique-image counts.
    #[arg(long)]
    pub dedup: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    #[arg(long)]
    pub entities: Option<PathBuf>,
    /// Image records, for captions.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Annotation log (JSONL), created when missing.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
}

#[derive(Debug, Args)]
pub struct BandArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    /// Band width in standard deviations of the negative scores.
    #[arg(long)]
    pub k_sd: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}
