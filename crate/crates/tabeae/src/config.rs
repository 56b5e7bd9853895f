use serde::{Deserialize, Serialize};
use tabeae_core::scheme::Profile;

use crate::error::{ModelError, Result};

/// Position ids given to table positions before decoding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TablePositions {
    /// `0..table_len`, added to the initial table matrix.
    #[default]
    Restart,
    /// No positional signal beyond what the initial encodings carry.
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_positions: usize,
    /// Added to every position id (2 for RoBERTa checkpoints).
    pub position_offset: usize,
    pub layer_norm_eps: f64,
    pub dropout: f64,
    pub init_std: f64,
    pub table_positions: TablePositions,
}

impl ModelConfig {
    /// Small randomly initialized stack for tests and toy corpora.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            hidden: 64,
            heads: 4,
            ffn: 128,
            encoder_layers: 2,
            decoder_layers: 2,
            max_positions: 512,
            position_offset: 0,
            layer_norm_eps: 1e-5,
            dropout: 0.0,
            init_std: 0.02,
            table_positions: TablePositions::Restart,
        }
    }

    /// RoBERTa-large split into 17 encoder and 7 decoder layers.
    pub fn paper(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            hidden: 1024,
            heads: 16,
            ffn: 4096,
            encoder_layers: 17,
            decoder_layers: 7,
            max_positions: 514,
            position_offset: 2,
            layer_norm_eps: 1e-5,
            dropout: 0.1,
            init_std: 0.02,
            table_positions: TablePositions::Restart,
        }
    }

    pub fn for_profile(profile: Profile, vocab_size: usize) -> Self {
        match profile {
            Profile::Paper => Self::paper(vocab_size),
            Profile::Desk => Self::desk(vocab_size),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Longest sequence the position table can index.
    pub fn max_len(&self) -> usize {
        self.max_positions.saturating_sub(self.position_offset)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "hidden width {} is not divisible into {} heads",
                self.hidden, self.heads
            )));
        }
        if self.vocab_size == 0 || self.ffn == 0 || self.max_len() == 0 {
            return Err(ModelError::Config("vocabulary, feed-forward and position sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}
