#![allow(dead_code)]

use candle::DType;
use tabeae::{Featurizer, ModelConfig, TabEae};
use tabeae_core::corpus::{default_vocab, synth_corpus, EaeInstance, SynthConfig};
use tabeae_core::prompts::{PromptRegistry, PromptTemplate};
use tabeae_core::scheme::{Ablation, TrainConfig};
use tabeae_core::tokenize::{Tokenizer, WordVocab};

pub fn registry() -> PromptRegistry {
    PromptRegistry::builtin_ace05()
}

pub fn corpus(seed: u64, n: usize, max_events: usize) -> Vec<EaeInstance> {
    let cfg = SynthConfig {
        seed,
        n_instances: n,
        max_events,
        ..Default::default()
    };
    synth_corpus(&cfg, &default_vocab(400), &registry()).unwrap()
}

pub struct Fixture {
    pub registry: PromptRegistry,
    pub corpus: Vec<EaeInstance>,
    pub vocab: WordVocab,
    pub train: TrainConfig,
}

impl Fixture {
    pub fn new(seed: u64, n: usize, max_events: usize) -> Self {
        let registry = registry();
        let corpus = corpus(seed, n, max_events);
        let vocab = WordVocab::for_corpus(8, &corpus, &registry);
        Fixture {
            registry,
            corpus,
            vocab,
            train: TrainConfig::desk(),
        }
    }

    pub fn featurizer(&self, ablation: Ablation) -> Featurizer<'_> {
        Featurizer::new(&self.registry, &self.vocab, &self.train, ablation)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::desk(self.vocab.vocab_size())
    }

    pub fn model(&self, seed: u64, dtype: DType) -> TabEae {
        TabEae::new(self.model_config(), seed, dtype).unwrap()
    }
}

/// Registry of `types` event types with random prompts over roles `R0..`.
pub fn random_registry(rng: &mut impl rand::Rng, types: usize, max_roles: usize) -> PromptRegistry {
    let prompts = (0..types)
        .map(|t| {
            let roles = rng.random_range(1..=max_roles);
            let mut markup = format!("event {t}");
            for r in 0..roles {
                markup.push_str(&format!(" with {{R{r}}}"));
            }
            if rng.random_bool(0.3) {
                markup.push_str(&format!(" and {{another|R{}}}", rng.random_range(0..roles)));
            }
            PromptTemplate::from_markup(&format!("T{t}"), &markup).unwrap()
        })
        .collect();
    PromptRegistry::new(prompts).unwrap()
}
