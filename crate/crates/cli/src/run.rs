//! Run configuration: a TOML file merged with command-line flags, resolved
//! into the manifest written at the top of every run directory.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tabeae::ModelConfig;
use tabeae_core::corpus::{load_corpus, CorpusFormat, EaeInstance};
use tabeae_core::prompts::PromptRegistry;
use tabeae_core::scheme::{Ablation, Dataset, Profile, SchemeConfig, TrainConfig};
use tabeae_core::tokenize::{Tokenizer, WordVocab};

use crate::args::RunArgs;
use crate::error::{runtime, CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const REGISTRY: &str = "registry.jsonl";
pub const VOCAB: &str = "vocab.json";
pub const SUMMARY: &str = "summary.json";
pub const CHECKPOINT: &str = "model.safetensors";
pub const METRICS: &str = "metrics.jsonl";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    scheme: Option<String>,
    profile: Option<String>,
    dataset: Option<String>,
    seed: Option<u64>,
    seeds: Option<Vec<u64>>,
    out: Option<PathBuf>,
    workers: Option<usize>,
    init_from: Option<PathBuf>,
    tokenizer: Option<PathBuf>,
    #[serde(default)]
    data: DataSection,
    ablation: Option<toml::Table>,
    train: Option<toml::Table>,
    model: Option<toml::Table>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    train: Option<PathBuf>,
    dev: Option<PathBuf>,
    test: Option<PathBuf>,
    format: Option<String>,
    registry: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryInfo {
    /// `builtin:ace05`, `builtin:mlee` or the file it was read from.
    pub source: String,
    pub hash: String,
    pub event_types: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TokenizerInfo {
    /// Word vocabulary stored next to the manifest.
    Word { path: String, size: usize, max_markers: usize },
    Hf { path: PathBuf, max_markers: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedLayout {
    pub seed: u64,
    pub checkpoint: String,
    pub metrics: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub manifest: String,
    pub registry: String,
    pub summary: String,
    pub runs: Vec<SeedLayout>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub scheme: SchemeConfig,
    pub profile: Profile,
    pub dataset: Dataset,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub ablation: Ablation,
    pub data: DataPaths,
    pub registry: RegistryInfo,
    pub tokenizer: TokenizerInfo,
    pub init_from: Option<PathBuf>,
    pub workers: usize,
    pub layout: Layout,
}

/// Everything a run needs before the model exists.
#[derive(Clone)]
pub struct Resolved {
    pub scheme: SchemeConfig,
    pub profile: Profile,
    pub dataset: Dataset,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub model_overrides: toml::Table,
    pub ablation: Ablation,
    pub data: DataPaths,
    pub registry: PromptRegistry,
    pub registry_source: String,
    pub tokenizer: Option<PathBuf>,
    pub init_from: Option<PathBuf>,
    pub workers: usize,
    pub out: PathBuf,
    pub quiet: bool,
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// `base` with the keys of `over` replaced; unknown keys are rejected.
fn overlay<T: Clone + Serialize + DeserializeOwned>(base: &T, over: Option<&toml::Table>, what: &str) -> CliResult<T> {
    let Some(over) = over else {
        return Ok(base.clone());
    };
    let mut table = toml::Table::try_from(base).map_err(runtime)?;
    merge(&mut table, over);
    table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid [{what}] section: {}", e.message())))
}

pub fn registry_from(spec: &str) -> CliResult<(PromptRegistry, String)> {
    match spec {
        "ace05" => Ok((PromptRegistry::builtin_ace05(), "builtin:ace05".into())),
        "mlee" => Ok((PromptRegistry::builtin_mlee(), "builtin:mlee".into())),
        path => Ok((PromptRegistry::load(path).map_err(runtime)?, path.to_string())),
    }
}

pub fn parse_format(s: &str) -> CliResult<CorpusFormat> {
    s.parse().map_err(|e: tabeae_core::Error| CliError::Usage(e.to_string()))
}

fn parse_dataset(s: &str) -> CliResult<Dataset> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| CliError::Usage(format!("unknown dataset `{s}` (ace05, rams, wikievents or mlee)")))
}

impl Resolved {
    pub fn from_args(args: &RunArgs) -> CliResult<Self> {
        let file: FileConfig = match &args.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {}", p.display(), e.message())))?
            }
            None => FileConfig::default(),
        };
        let scheme = match (&args.scheme, &file.scheme) {
            (Some(s), _) => *s,
            (None, Some(s)) => s.parse().map_err(|e: tabeae_core::Error| CliError::Usage(e.to_string()))?,
            (None, None) => SchemeConfig::MULTI_SINGLE,
        };
        let profile = match (args.profile, &file.profile) {
            (Some(p), _) => p,
            (None, Some(s)) => s.parse().map_err(|e: tabeae_core::Error| CliError::Usage(e.to_string()))?,
            (None, None) => Profile::Desk,
        };
        let dataset = match (args.dataset, &file.dataset) {
            (Some(d), _) => d,
            (None, Some(s)) => parse_dataset(s)?,
            (None, None) => Dataset::Ace05,
        };

        let mut train = overlay(&TrainConfig::for_profile(profile, dataset), file.train.as_ref(), "train")?;
        if let Some(steps) = args.steps {
            train.steps = steps;
        }
        let seeds = match (&args.seeds, args.seed, &file.seeds, file.seed) {
            (Some(s), ..) => s.clone(),
            (None, Some(s), ..) => vec![s],
            (None, None, Some(s), _) => s.clone(),
            (None, None, None, Some(s)) => vec![s],
            (None, None, None, None) => vec![train.seed],
        };
        if seeds.is_empty() {
            return Err(CliError::Usage("the seed list is empty".into()));
        }
        let mut uniq = seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != seeds.len() {
            return Err(CliError::Usage("the seed list contains duplicates".into()));
        }
        train.seed = seeds[0];
        train.validate().map_err(|e| CliError::Usage(e.to_string()))?;

        let mut ablation = overlay(&Ablation::default(), file.ablation.as_ref(), "ablation")?;
        ablation.saam &= !args.no_saam;
        ablation.pet &= !args.no_pet;
        ablation.prompts &= !args.no_prompts;

        let pick = |flag: &Option<PathBuf>, file: &Option<PathBuf>| flag.clone().or_else(|| file.clone());
        let train_path = pick(&args.data, &file.data.train)
            .ok_or_else(|| CliError::Usage("no training data; pass --data or set data.train".into()))?;
        let format = args
            .format
            .clone()
            .or(file.data.format)
            .unwrap_or_else(|| "native-jsonl".into());
        parse_format(&format)?;
        let data = DataPaths {
            train: train_path,
            dev: pick(&args.dev, &file.data.dev),
            test: pick(&args.test, &file.data.test),
            format,
        };
        let registry_spec = args.registry.clone().or(file.data.registry).unwrap_or_else(|| {
            match dataset {
                Dataset::Mlee => "mlee",
                _ => "ace05",
            }
            .into()
        });
        let (registry, registry_source) = registry_from(&registry_spec)?;
        let out = args
            .out
            .clone()
            .or(file.out)
            .ok_or_else(|| CliError::Usage("no run directory; pass --out or set out".into()))?;
        Ok(Resolved {
            scheme,
            profile,
            dataset,
            seeds,
            train,
            model_overrides: file.model.unwrap_or_default(),
            ablation,
            data,
            registry,
            registry_source,
            tokenizer: args.tokenizer.clone().or(file.tokenizer),
            init_from: args.init_from.clone().or(file.init_from),
            workers: args.workers.or(file.workers).unwrap_or(1).max(1),
            out,
            quiet: args.quiet,
        })
    }

    pub fn load(&self, path: &Path) -> CliResult<Vec<EaeInstance>> {
        load_corpus(path, parse_format(&self.data.format)?, Some(&self.registry)).map_err(runtime)
    }

    pub fn model_config(&self, vocab_size: usize) -> CliResult<ModelConfig> {
        if self.model_overrides.contains_key("vocab_size") {
            return Err(CliError::Usage("model.vocab_size is set by the tokenizer".into()));
        }
        let cfg = overlay(
            &ModelConfig::for_profile(self.profile, vocab_size),
            Some(&self.model_overrides),
            "model",
        )?;
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// Word vocabulary or a Hugging Face tokenizer, as recorded in a manifest.
pub enum AnyTokenizer {
    Word(WordVocab),
    #[cfg(feature = "hf-tokenizer")]
    Hf(tabeae::hf::HfTokenizer),
}

impl AnyTokenizer {
    pub fn as_dyn(&self) -> &dyn Tokenizer {
        match self {
            AnyTokenizer::Word(v) => v,
            #[cfg(feature = "hf-tokenizer")]
            AnyTokenizer::Hf(t) => t,
        }
    }

    pub fn hf(path: &Path, max_markers: usize) -> CliResult<Self> {
        #[cfg(feature = "hf-tokenizer")]
        {
            Ok(AnyTokenizer::Hf(
                tabeae::hf::HfTokenizer::from_file(path, max_markers).map_err(runtime)?,
            ))
        }
        #[cfg(not(feature = "hf-tokenizer"))]
        {
            let _ = max_markers;
            Err(CliError::Runtime(format!(
                "{} needs a build with the `hf-tokenizer` feature",
                path.display()
            )))
        }
    }
}

/// Markers needed by the largest instance, with headroom.
pub fn max_markers(corpora: &[&[EaeInstance]]) -> usize {
    corpora
        .iter()
        .flat_map(|c| c.iter().map(EaeInstance::num_events))
        .max()
        .unwrap_or(0)
        .max(8)
}
