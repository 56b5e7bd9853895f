use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tabeae_core::eval::Analysis;
use tabeae_core::scheme::{Dataset, Mode, Profile, SchemeConfig};

#[derive(Parser, Debug)]
#[command(name = "tabeae", version, about = "Table-based event argument extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a deterministic synthetic corpus as native JSONL.
    Synth(SynthArgs),
    /// Train one model per seed under a single run directory.
    Train(TrainArgs),
    /// Write predictions of a checkpoint as JSONL.
    Predict(PredictArgs),
    /// Predict, score and run the requested analyses.
    Eval(EvalArgs),
    /// Score existing predictions against a gold corpus.
    Analyze(AnalyzeArgs),
    /// Train and evaluate the full model and its ablations.
    Ablate(AblateArgs),
}

fn parse_scheme(s: &str) -> Result<SchemeConfig, String> {
    s.parse().map_err(|e: tabeae_core::Error| e.to_string())
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: tabeae_core::Error| e.to_string())
}

fn parse_analysis(s: &str) -> Result<Analysis, String> {
    s.parse().map_err(|e: tabeae_core::Error| e.to_string())
}

fn parse_dataset(s: &str) -> Result<Dataset, String> {
    match s {
        "ace05" => Ok(Dataset::Ace05),
        "rams" => Ok(Dataset::Rams),
        "wikievents" => Ok(Dataset::Wikievents),
        "mlee" => Ok(Dataset::Mlee),
        other => Err(format!("unknown dataset `{other}` (ace05, rams, wikievents or mlee)")),
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "single" => Ok(Mode::Single),
        "multi" => Ok(Mode::Multi),
        other => Err(format!("unknown mode `{other}` (single or multi)")),
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of instances.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub max_events: usize,
    /// `ace05`, `mlee` or a prompt registry JSONL file.
    #[arg(long, default_value = "ace05")]
    pub registry: String,
    /// Size of the pseudo-word vocabulary.
    #[arg(long, default_value_t = 400)]
    pub vocab: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<SchemeConfig>,
    #[arg(long, value_parser = parse_profile)]
    pub profile: Option<Profile>,
    #[arg(long, value_parser = parse_dataset)]
    pub dataset: Option<Dataset>,
    #[arg(long)]
    pub no_saam: bool,
    #[arg(long)]
    pub no_pet: bool,
    #[arg(long)]
    pub no_prompts: bool,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds; one checkpoint each plus a mean/std summary.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Training corpus.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Development corpus used for checkpoint selection.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Test corpus scored with the selected checkpoint.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Corpus format: native-jsonl, ace05, rams, wikievents or mlee.
    #[arg(long)]
    pub format: Option<String>,
    /// `ace05`, `mlee` or a prompt registry JSONL file.
    #[arg(long)]
    pub registry: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Threads used to featurize the corpus.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Pretrained RoBERTa weights (safetensors) to start from.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Hugging Face `tokenizer.json`; a word vocabulary is built otherwise.
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Variants to run, from full, no-saam, no-pet and no-prompts.
    #[arg(long, value_delimiter = ',', default_value = "full,no-saam,no-pet,no-prompts")]
    pub variants: Vec<String>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "native-jsonl")]
    pub format: String,
    /// Inference mode; defaults to the one of the training scheme.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "native-jsonl")]
    pub format: String,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long, value_delimiter = ',', value_parser = parse_analysis)]
    pub analyses: Vec<Analysis>,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, default_value = "native-jsonl")]
    pub format: String,
    /// Needed by the ace05 and mlee readers to resolve roles.
    #[arg(long)]
    pub registry: Option<String>,
    #[arg(long, value_delimiter = ',', value_parser = parse_analysis)]
    pub analyses: Vec<Analysis>,
    #[arg(long)]
    pub out: PathBuf,
}
