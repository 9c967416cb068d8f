use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ctglab", version, about = "Train tiny transformers with contrastive objectives and compare decoding methods")]
pub struct Cli {
    /// TOML or JSON file with the command's settings; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Seed for initialization, batch sampling and stochastic decoding.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Run on the calling thread only.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize a text file into a corpus with train/valid/test splits.
    Ingest(IngestArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Continue prompts with a decoding method.
    Generate(GenerateArgs),
    /// Compute language-modelling, generation and isotropy metrics.
    Evaluate(EvaluateArgs),
    /// Evaluate a grid of decoding or training settings.
    Sweep(SweepArgs),
    /// Measure decoding latency relative to greedy search.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub valid_frac: Option<f64>,
    #[arg(long)]
    pub test_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// mle, simctg or unlikelihood.
    #[arg(long)]
    pub objective: Option<String>,
    /// Contrastive margin.
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Save a checkpoint every N steps (0 disables).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Print the loss every N steps (0 disables).
    #[arg(long)]
    pub log_every: Option<usize>,
}

/// Where prompts come from: a text file (one per line) or corpus documents.
#[derive(Debug, Args)]
pub struct PromptArgs {
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Take prompts from the leading tokens of corpus documents.
    #[arg(long)]
    pub prompt_corpus: Option<PathBuf>,
    #[arg(long)]
    pub prompt_split: Option<String>,
    /// Number of corpus prompts.
    #[arg(long)]
    pub count: Option<usize>,
    /// Tokens taken from each corpus document.
    #[arg(long)]
    pub prefix_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// greedy, beam, top_k, nucleus, contrastive or diverse_contrastive.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub n_stochastic: Option<usize>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    /// Renormalize model confidence over the top-k candidates.
    #[arg(long)]
    pub renormalize_confidence: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub prompts: PromptArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output of `generate`.
    #[arg(long)]
    pub generations: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Evaluation window for next-token metrics (defaults to max_seq_len).
    #[arg(long)]
    pub window: Option<usize>,
    /// Truncate the split stream to this many tokens.
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Corpus windows used for isotropy metrics when no generations are given.
    #[arg(long)]
    pub isotropy_samples: Option<usize>,
    /// Comma-separated metric names; defaults to every computable metric.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    /// Write one token similarity matrix CSV per isotropy sample here.
    #[arg(long)]
    pub similarity_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// contrastive (k × alpha), nucleus (p) or margin (training one model per value).
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Grid of k values, e.g. `5,8,10`.
    #[arg(long)]
    pub k_grid: Option<String>,
    /// Grid of alpha values, e.g. `0.4:1.0:0.1` or `0.5,0.6`.
    #[arg(long)]
    pub alpha_grid: Option<String>,
    #[arg(long)]
    pub p_grid: Option<String>,
    #[arg(long)]
    pub margin_grid: Option<String>,
    /// Training corpus for margin sweeps.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[command(flatten)]
    pub prompts: PromptArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Decoding configs such as `greedy`, `beam:b=4` or `contrastive:k=8,alpha=0.6`.
    #[arg(long = "decode", value_name = "SPEC")]
    pub configs: Vec<String>,
    /// Add beam b and contrastive k over these widths, e.g. `2,4,6,8,10`.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    #[command(flatten)]
    pub prompts: PromptArgs,
}
