//! Command-line definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gmvpg_core::correction::VoteRule;
use gmvpg_core::graph::EdgeRule;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "gmvpg",
    version,
    about = "Multi-view pseudo-labeling of speaker embeddings and scoring back-end"
)]
pub struct Cli {
    /// Where to write the JSON run report (default: next to the main output).
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic multi-view corpus.
    Synth(SynthArgs),
    /// Drop byte-identical embedding records.
    Dedup(DedupArgs),
    /// Compute domain statistics (mean and covariance) of an embedding file.
    Stats(StatsArgs),
    /// Align embeddings to another domain (mean shift or CORAL).
    Adapt(AdaptArgs),
    /// Write the voted multi-view affinity graph at one k.
    Graph(GraphArgs),
    /// Progressive multi-view sub-graph clustering.
    Cluster(ClusterArgs),
    /// Pseudo-label correction with multi-view merge voting.
    Correct(CorrectArgs),
    /// Per-class mean embeddings (e.g. an AS-norm cohort).
    Centers(CentersArgs),
    /// Cosine scoring of a trial list.
    Score(ScoreArgs),
    /// Adaptive score normalization against a cohort.
    Asnorm(AsnormArgs),
    /// EER and minDCF of keyed scores.
    Eval(EvalArgs),
    /// Train a logistic-regression calibration or fusion model.
    QmfTrain(QmfTrainArgs),
    /// Apply a calibration model to scores.
    QmfApply(QmfApplyArgs),
    /// Weighted fusion of aligned score files.
    Fuse(FuseArgs),
    /// Generate a balanced development trial list from pseudo-labels.
    GenTrials(GenTrialsArgs),
    /// Run a JSON pipeline manifest.
    Pipeline(PipelineArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Dedup(_) => "dedup",
            Command::Stats(_) => "stats",
            Command::Adapt(_) => "adapt",
            Command::Graph(_) => "graph",
            Command::Cluster(_) => "cluster",
            Command::Correct(_) => "correct",
            Command::Centers(_) => "centers",
            Command::Score(_) => "score",
            Command::Asnorm(_) => "asnorm",
            Command::Eval(_) => "eval",
            Command::QmfTrain(_) => "qmf-train",
            Command::QmfApply(_) => "qmf-apply",
            Command::Fuse(_) => "fuse",
            Command::GenTrials(_) => "gen-trials",
            Command::Pipeline(_) => "pipeline",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub speakers: usize,
    #[arg(long, default_value_t = 30)]
    pub utts: usize,
    /// Upper bound of a per-speaker utterance range starting at --utts.
    #[arg(long)]
    pub utts_max: Option<usize>,
    /// Utterance counts of extra speakers, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub extra_speakers: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub views: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// JSON array of `dim` offsets added to every vector.
    #[arg(long)]
    pub shift: Option<PathBuf>,
    /// JSON array of `dim*dim` row-major matrix entries applied before the shift.
    #[arg(long)]
    pub transform: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub duplicate_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    pub split_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    pub max_prototype_cosine: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DedupArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub views: Vec<PathBuf>,
    /// Deduplicated views are written here under their original file names.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptMode {
    Mean,
    Coral,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Input is target-domain data moved onto the source statistics.
    ToSource,
    /// Input is source-domain data moved onto the target statistics.
    ToTarget,
}

#[derive(Debug, Args, Serialize)]
pub struct AdaptArgs {
    #[arg(long, value_enum)]
    pub mode: AdaptMode,
    #[arg(long)]
    pub source_stats: PathBuf,
    /// Target-domain statistics; computed from --in when omitted.
    #[arg(long)]
    pub target_stats: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = gmvpg_core::adaptation::DEFAULT_RIDGE)]
    pub ridge: f64,
    #[arg(long, value_enum, default_value_t = Direction::ToSource)]
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleArg {
    Or,
    And,
}

impl From<RuleArg> for EdgeRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Or => EdgeRule::Or,
            RuleArg::And => EdgeRule::And,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GraphArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub views: Vec<PathBuf>,
    #[arg(long = "K", default_value_t = 500)]
    pub big_k: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0.7)]
    pub th_high: f64,
    #[arg(long, value_enum, default_value_t = RuleArg::Or)]
    pub rule: RuleArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ClusterArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub views: Vec<PathBuf>,
    #[arg(long = "K", default_value_t = 500)]
    pub big_k: usize,
    #[arg(long, default_value_t = 10)]
    pub k_init: usize,
    #[arg(long, default_value_t = 5)]
    pub k_step: usize,
    #[arg(long, default_value_t = 50)]
    pub k_final: usize,
    #[arg(long, default_value_t = 0.7)]
    pub th_high: f64,
    #[arg(long, default_value_t = 0.5)]
    pub th_nm: f64,
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    #[arg(long, default_value_t = 10)]
    pub min_class: usize,
    /// Per-class cap on utterances in a merge test; 0 disables subsampling.
    #[arg(long, default_value_t = 200)]
    pub max_per_class: usize,
    #[arg(long, value_enum, default_value_t = RuleArg::Or)]
    pub rule: RuleArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines log of every merge decision.
    #[arg(long)]
    pub audit: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteArg {
    Unanimous,
    Majority,
}

impl From<VoteArg> for VoteRule {
    fn from(v: VoteArg) -> Self {
        match v {
            VoteArg::Unanimous => VoteRule::Unanimous,
            VoteArg::Majority => VoteRule::Majority,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CorrectArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub views: Vec<PathBuf>,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub th_top1: f64,
    #[arg(long, default_value_t = 0.4)]
    pub th_top2: f64,
    #[arg(long, value_enum, default_value_t = VoteArg::Unanimous)]
    pub vote: VoteArg,
    #[arg(long, default_value_t = 3)]
    pub min_support: usize,
    /// Share of views that must put an utterance in the low band to drop it.
    #[arg(long, default_value_t = 1.0)]
    pub low_fraction: f64,
    /// Use plain class means instead of length-normalized ones.
    #[arg(long)]
    pub raw_centers: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub audit: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CentersArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub raw_centers: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub trials: PathBuf,
    #[arg(long)]
    pub enroll: PathBuf,
    /// Test-side embeddings (default: the enroll file).
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AsnormArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub enroll: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub top_n: usize,
    /// Subtract the imposter means only (the default).
    #[arg(long, conflicts_with = "standard")]
    pub remove_variance: bool,
    /// Standard AS-norm: also divide by the imposter deviations.
    #[arg(long)]
    pub standard: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub trials: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub p_target: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_fa: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_miss: f64,
    /// Report the unnormalized detection cost.
    #[arg(long)]
    pub raw_dcf: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct QmfTrainArgs {
    /// One or more aligned score files; several make a fusion model.
    #[arg(long, num_args = 1.., required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub trials: PathBuf,
    /// Extra per-trial quality columns, whitespace separated.
    #[arg(long)]
    pub quality: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct QmfApplyArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub quality: Option<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FuseArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(
        long,
        value_delimiter = ',',
        required_unless_present = "model",
        conflicts_with = "model"
    )]
    pub weights: Vec<f64>,
    /// Fusion model from qmf-train (weights and bias).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GenTrialsArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// TSV `label<TAB>purity`.
    #[arg(long, conflicts_with = "truth")]
    pub purity: Option<PathBuf>,
    /// Ground-truth labels from which per-class purity is computed.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Utterance ids of labeled speakers, one per line.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[arg(long, default_value_t = 40_000)]
    pub total: usize,
    #[arg(long, default_value_t = 70)]
    pub speakers: usize,
    #[arg(long, default_value_t = 20)]
    pub segments: usize,
    #[arg(long, default_value_t = 2.0)]
    pub labeled_weight: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PipelineArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Only validate the manifest.
    #[arg(long)]
    pub check: bool,
}
