//! Data model and model-independent machinery for table-based event
//! argument extraction: corpora, trigger marking, prompt registries,
//! slotted tables, structure-aware attention masks, span selection,
//! Hungarian matching, training schemes and scoring.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod mask;
pub mod prompts;
pub mod scheme;
pub mod span;
pub mod table;
pub mod tokenize;

pub use error::{Error, Result};
