//! Subword tokenizer backed by a Hugging Face `tokenizer.json` (byte-level
//! BPE as used by RoBERTa). Trigger markers are registered as added
//! special tokens.

use std::ops::Range;
use std::path::Path;

use tabeae_core::tokenize::{TokenId, Tokenizer};
use tokenizers::AddedToken;

use crate::error::{ModelError, Result};

pub struct HfTokenizer {
    inner: tokenizers::Tokenizer,
    bos: TokenId,
    eos: TokenId,
    pad: TokenId,
    markers: Vec<(TokenId, TokenId)>,
}

impl HfTokenizer {
    pub fn from_file(path: impl AsRef<Path>, max_markers: usize) -> Result<Self> {
        let path = path.as_ref();
        let mut inner = tokenizers::Tokenizer::from_file(path)
            .map_err(|e| ModelError::Config(format!("cannot load tokenizer {}: {e}", path.display())))?;
        let names: Vec<String> = (1..=max_markers)
            .flat_map(|i| [format!("<T-{i}>"), format!("</T-{i}>")])
            .collect();
        let added: Vec<AddedToken> = names.iter().map(|n| AddedToken::from(n.clone(), true)).collect();
        inner
            .add_special_tokens(added)
            .map_err(|e| ModelError::Config(format!("cannot add marker tokens: {e}")))?;
        let id = |t: &str| {
            inner
                .token_to_id(t)
                .ok_or_else(|| ModelError::Config(format!("tokenizer has no `{t}` token")))
        };
        let markers = (1..=max_markers)
            .map(|i| Ok((id(&format!("<T-{i}>"))?, id(&format!("</T-{i}>"))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(HfTokenizer {
            bos: id("<s>")?,
            eos: id("</s>")?,
            pad: id("<pad>")?,
            markers,
            inner,
        })
    }
}

impl Tokenizer for HfTokenizer {
    fn tokenize_word(&self, word: &str) -> Vec<TokenId> {
        // leading space: mid-sentence form of the word
        self.inner
            .encode(format!(" {word}"), false)
            .map(|e| e.get_ids().to_vec())
            .unwrap_or_default()
    }

    fn tokenize_text(&self, text: &str) -> Vec<(TokenId, Range<usize>)> {
        match self.inner.encode(text, false) {
            Ok(e) => e
                .get_ids()
                .iter()
                .zip(e.get_offsets())
                .map(|(&id, &(s, t))| (id, s..t))
                .collect(),
            Err(_) => Vec::new(),
        }
    }

    fn bos(&self) -> TokenId {
        self.bos
    }

    fn eos(&self) -> TokenId {
        self.eos
    }

    fn pad(&self) -> TokenId {
        self.pad
    }

    fn marker(&self, ordinal: usize, open: bool) -> tabeae_core::Result<TokenId> {
        let (o, c) = *self.markers.get(ordinal.wrapping_sub(1)).ok_or_else(|| {
            tabeae_core::Error::InvalidArgument(format!(
                "marker ordinal {ordinal} exceeds the {} reserved markers",
                self.markers.len()
            ))
        })?;
        Ok(if open { o } else { c })
    }

    fn vocab_size(&self) -> usize {
        self.inner.get_vocab_size(true)
    }
}
