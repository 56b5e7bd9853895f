//! Table-based event argument extraction model on candle: an encoder over the
//! marked text, a decoder over the slotted table with a structure-aware
//! attention mask, and span selection by bipartite matching.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod features;
#[cfg(feature = "hf-tokenizer")]
pub mod hf;
pub mod import;
pub mod loss;
pub mod model;
pub mod nn;
pub mod params;
pub mod predict;
pub mod train;

pub use config::{ModelConfig, TablePositions};
pub use error::{ModelError, Result};
pub use features::{Featurizer, SampleInput};
pub use model::{SampleOutput, TabEae};
pub use predict::{predict_corpus, predict_instance};
pub use train::{train, MetricRecord, TrainOptions, TrainOutcome};
