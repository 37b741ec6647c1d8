use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use chive::model::ModelKind;

#[derive(Debug, Parser)]
#[command(
    name = "chive",
    version,
    about = "Hierarchical variational prosody model: corpus, training, evaluation and synthesis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus directory.
    GenCorpus(GenCorpusArgs),
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Score a checkpoint on a corpus split.
    Eval(EvalArgs),
    /// Decode a contour for one utterance.
    Synthesize(SynthesizeArgs),
    /// Decode a target utterance with the prosody of a reference utterance.
    Transfer(TransferArgs),
    /// Compare analytic and finite-difference gradients of the training objective.
    Gradcheck(GradcheckArgs),
    /// Print parameter counts per model and module.
    Params(ParamsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-utterance work.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    /// Flat `key = value` file of flag defaults; flags on the command line win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Chive,
    Baseline,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Chive => ModelKind::Chive,
            ModelArg::Baseline => ModelKind::Baseline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Durations {
    /// Ground-truth durations from the input document.
    Teacher,
    /// Rounded predicted durations.
    Free,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GenCorpusArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2200)]
    pub utterances: usize,
    /// Standard deviation of the log-F0 and c0 noise.
    #[arg(long, default_value_t = 0.02)]
    pub noise_scale: f64,
    #[arg(long, default_value_t = 2)]
    pub min_words: usize,
    #[arg(long, default_value_t = 6)]
    pub max_words: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Corpus directory.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Run directory for checkpoints and the metrics log.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Chive)]
    pub model: ModelArg,
    /// Small dimensions (hidden 16, embedding 8).
    #[arg(long)]
    pub toy: bool,
    #[arg(long, default_value_t = 10_000)]
    pub steps: u64,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    pub duration_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub f0c0_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kl_weight: f64,
    #[arg(long, default_value_t = 2000)]
    pub kl_warmup: u64,
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
    /// Steps between held-out evaluations and checkpoints (0: only at the end).
    #[arg(long, default_value_t = 500)]
    pub eval_interval: u64,
    /// Evaluate on at most this many held-out utterances during training.
    #[arg(long)]
    pub eval_limit: Option<usize>,
    #[arg(long, default_value_t = 10.0 / 11.0)]
    pub train_fraction: f64,
    /// Seed of the train/eval split (defaults to --seed).
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Continue from `last.ckpt` in the run directory if present.
    #[arg(long)]
    pub resume: bool,
    /// Keep the random initialisation of output biases and input scaling.
    #[arg(long)]
    pub no_data_init: bool,
    /// Echo metrics rows to stderr.
    #[arg(long)]
    pub verbose: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Encoded,
    Zero,
    Random,
    /// Encoded, zero and random with bootstrap gaps.
    Ordering,
    /// Correlation of transferred pitch shifts with planted reference offsets.
    Transfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitPart {
    Train,
    Eval,
    All,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalMode::Ordering)]
    pub mode: EvalMode,
    #[arg(long, value_enum, default_value_t = SplitPart::Eval)]
    pub split: SplitPart,
    #[arg(long, default_value_t = 10.0 / 11.0)]
    pub train_fraction: f64,
    /// Seed of the train/eval split (defaults to --seed).
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Seed of the random embeddings and transfer pairs (defaults to --seed).
    #[arg(long)]
    pub random_seed: Option<u64>,
    /// Reference/target pairs for transfer mode.
    #[arg(long, default_value_t = 200)]
    pub pairs: usize,
    /// Score at most this many utterances of the split.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthMode {
    Encoded,
    Zero,
    Random,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Utterance document (`.utt.json`); encoded mode needs its frame streams.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = SynthMode::Zero)]
    pub mode: SynthMode,
    /// Use this embedding (JSON array) instead of --mode.
    #[arg(long, conflicts_with = "mode")]
    pub embedding: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Durations::Free)]
    pub durations: Durations,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TransferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reference utterance document with frame streams.
    #[arg(long)]
    pub reference: PathBuf,
    /// Target utterance document.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, value_enum, default_value_t = Durations::Free)]
    pub durations: Durations,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradcheckModel {
    Chive,
    Baseline,
    Both,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = GradcheckModel::Both)]
    pub model: GradcheckModel,
    /// Random trees of 1 to 6 words.
    #[arg(long, default_value_t = 20)]
    pub trees: usize,
    /// Coordinates checked per tree.
    #[arg(long, default_value_t = 40)]
    pub samples: usize,
    /// Finite-difference step (defaults to the library setting).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Exit with status 3 when the worst relative error reaches this.
    #[arg(long, default_value_t = 1e-5)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ParamsArgs {
    /// Take feature sizes from this corpus instead of the default generator settings.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Small dimensions (hidden 16, embedding 8).
    #[arg(long)]
    pub toy: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(flatten)]
    pub common: Common,
}
