use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "nralign",
    version,
    about = "Noise-robust clip-caption alignment tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clip-caption similarity matrix for one video and one paragraph.
    Sim(SimArgs),
    /// Entropic transport on a similarity CSV, with or without the bucket.
    Ot(OtArgs),
    /// DTW or OTAM alignment of a similarity CSV.
    Align(AlignArgs),
    /// Video-paragraph retrieval recall over a manifest.
    Retrieve(RetrieveArgs),
    /// Clip and video losses over a manifest treated as one batch.
    Loss(LossArgs),
    /// Compare production routines against brute-force references.
    OracleCheck(OracleArgs),
    /// Render a plan CSV as a binary PGM.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Fine,
    Mean,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MarginalsArg {
    Matched,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Dtw,
    Otam,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    Dataset,
    Candidate,
    Pair,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CapAvgArg {
    Global,
    PerCandidate,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub video_id: String,
    #[arg(long)]
    pub paragraph_id: String,
    #[arg(long, value_enum, default_value = "fine")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Prompt bucket selection shared by `ot`, `retrieve` and `loss`.
#[derive(Debug, Args)]
pub struct BucketArgs {
    /// Prompt value from this quantile of the aligned-pair similarities.
    #[arg(long, conflicts_with = "bucket_p", allow_negative_numbers = true)]
    pub bucket_quantile: Option<f64>,
    /// Fixed prompt value.
    #[arg(long, allow_negative_numbers = true)]
    pub bucket_p: Option<f64>,
    #[arg(long, value_enum, default_value = "matched")]
    pub marginals: MarginalsArg,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-9, allow_negative_numbers = true)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct OtArgs {
    #[arg(long)]
    pub sim: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub bucket: BucketArgs,
    /// Plain uniform-marginal transport without the bucket.
    #[arg(long, conflicts_with_all = ["bucket_quantile", "bucket_p"])]
    pub no_bucket: bool,
    #[arg(long)]
    pub out_plan: PathBuf,
    #[arg(long)]
    pub out_distance: PathBuf,
    /// Row-argmax realignment as JSON.
    #[arg(long)]
    pub out_alignment: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub sim: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Treat CSV columns as the query sequence.
    #[arg(long)]
    pub transpose: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// capavg, dtw, otam or ot.
    #[arg(long)]
    pub measure: String,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub recall: Vec<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub bucket: BucketArgs,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "fine")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "dataset")]
    pub prompt_scope: ScopeArg,
    #[arg(long, value_enum, default_value = "global")]
    pub capavg_variant: CapAvgArg,
    /// Divide DTW and OTAM distances by path length.
    #[arg(long)]
    pub normalize_path: bool,
    /// Record wall-clock runtime in the report.
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.07, allow_negative_numbers = true)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub epsilon_clip: f64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub epsilon_video: f64,
    /// Sinkhorn iterations for both the targets and the video plans.
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "fine")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub bucket: BucketArgs,
    /// Verify gradients by central differences.
    #[arg(long)]
    pub check_grad: bool,
    #[arg(long, default_value_t = 1e-5, allow_negative_numbers = true)]
    pub fd_step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub cases: usize,
    /// Largest assignment size searched exhaustively.
    #[arg(long, default_value_t = 7)]
    pub max_n: usize,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
