use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "omnitrace", version, about = "Span-level attribution over decoding traces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trace, chunk and curate every input trace.
    Attribute(AttributeArgs),
    /// Score an attribution report against gold labels.
    Evaluate(EvaluateArgs),
    /// Positional, calibration and quality analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Comparison baselines.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Generate synthetic traces with planted gold labels.
    Synth(SynthArgs),
    /// Check trace and gold files without producing results.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    /// Input trace (`.trace.jsonl`); repeatable.
    #[arg(long = "trace", required = true)]
    pub traces: Vec<PathBuf>,
    /// Curation config (TOML). Falls back to $OMNITRACE_CONFIG, then defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Signal reduction: attmean, rawatt or raw:<channel>.
    #[arg(long, default_value = "attmean")]
    pub channel: String,
    /// Switch off one curation component: pos, conf_weight, conf, run, pmin.
    #[arg(long = "ablate")]
    pub ablate: Vec<String>,
    /// Curate each modality separately and union the selections.
    #[arg(long)]
    pub per_modality: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads across input files.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Span,
    Time,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    Chunk,
    Example,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Attribution report (`attr.json`).
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold file (`.gold.json`); repeatable.
    #[arg(long = "gold", required = true)]
    pub golds: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "span")]
    pub mode: ModeArg,
    /// Time-F1 bin width in seconds.
    #[arg(long = "bin", default_value_t = 1.0)]
    pub bin_s: f64,
    /// Score per chunk, or per example over the union of its chunks.
    #[arg(long, value_enum, default_value = "chunk")]
    pub scope: ScopeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightingArg {
    Equal,
    Mass,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Distribution of normalized positions of selected sources.
    Position {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "equal")]
        weighting: WeightingArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predicted vs gold image-mass share per chunk.
    Calibration {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "gold", required = true)]
        golds: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attribution F1 grouped by generation quality.
    Quality {
        /// Evaluation report (`eval.json`).
        #[arg(long)]
        eval: PathBuf,
        /// JSON object: example id -> true/false or a score in [0, 1].
        #[arg(long)]
        quality: PathBuf,
        #[arg(long, default_value_t = 5)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum BaselineCommand {
    /// Select sources whose embedding is similar enough to the chunk's.
    Embed {
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
        /// Embedding sidecar per trace, in the same order.
        #[arg(long = "embeddings", required = true)]
        embeddings: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.25)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select a random number of random sources per chunk.
    Random {
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        seed: u64,
        /// Comma-separated weights of selection sizes 0, 1, 2, ...
        #[arg(long, default_value = "1,1,1")]
        k_weights: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthesis spec (TOML); defaults apply to absent keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Seed of the first example; example `i` uses `seed + i`.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long = "trace")]
    pub traces: Vec<PathBuf>,
    /// Gold file, checked against the trace with the same example id.
    #[arg(long = "gold")]
    pub golds: Vec<PathBuf>,
}
