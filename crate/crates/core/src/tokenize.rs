//! Subword tokenization interface and a word-level vocabulary used by the
//! desk-scale model.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::EaeInstance;
use crate::error::{Error, Result};
use crate::prompts::PromptRegistry;

pub type TokenId = u32;

/// Maps pre-tokenized words and free prompt text onto model token ids.
pub trait Tokenizer: Send + Sync {
    /// Subword ids of one corpus word. Never empty.
    fn tokenize_word(&self, word: &str) -> Vec<TokenId>;

    /// Subword ids of free text together with the character range each one
    /// covers.
    fn tokenize_text(&self, text: &str) -> Vec<(TokenId, Range<usize>)>;

    fn bos(&self) -> TokenId;
    fn eos(&self) -> TokenId;
    fn pad(&self) -> TokenId;

    /// Id of `<T-i>` (`open`) or `</T-i>` for ordinal `i >= 1`.
    fn marker(&self, ordinal: usize, open: bool) -> Result<TokenId>;

    fn vocab_size(&self) -> usize;
}

/// Splits free text into word-like pieces: runs of alphanumerics (with
/// inner `-`, `_`, `'`) or single punctuation characters.
pub fn split_pieces(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let is_word = |c: char| c.is_alphanumeric() || c == '-' || c == '_' || c == '\'';
    for (i, c) in text.char_indices() {
        if is_word(c) {
            if start.is_none() {
                start = Some(i);
            }
            continue;
        }
        if let Some(s) = start.take() {
            out.push(s..i);
        }
        if !c.is_whitespace() {
            out.push(i..i + c.len_utf8());
        }
    }
    if let Some(s) = start {
        out.push(s..text.len());
    }
    out
}

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// One id per word; unknown words map to `<unk>`. Trigger markers
/// `<T-1> … <T-K>` / `</T-1> … </T-K>` are reserved up front.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WordVocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
    max_markers: usize,
}

impl PartialEq for WordVocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.max_markers == other.max_markers
    }
}

impl WordVocab {
    pub fn new(max_markers: usize) -> Self {
        let mut v = WordVocab {
            tokens: Vec::new(),
            index: HashMap::new(),
            max_markers,
        };
        for s in [PAD, BOS, EOS, UNK] {
            v.add(s);
        }
        for i in 1..=max_markers {
            v.add(&format!("<T-{i}>"));
            v.add(&format!("</T-{i}>"));
        }
        v
    }

    /// Builds a vocabulary over corpus words plus the pieces of extra texts
    /// (prompts, role names), in first-seen order.
    pub fn build<'a>(
        max_markers: usize,
        words: impl IntoIterator<Item = &'a str>,
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        let mut v = Self::new(max_markers);
        for w in words {
            v.add(w);
        }
        for t in texts {
            for r in split_pieces(t) {
                v.add(&t[r]);
            }
        }
        v
    }

    /// Vocabulary covering a corpus, every prompt of a registry and the bare
    /// role names.
    pub fn for_corpus(max_markers: usize, corpus: &[EaeInstance], registry: &PromptRegistry) -> Self {
        let words = corpus.iter().flat_map(|x| x.tokens.iter().map(String::as_str));
        let roles = registry.iter().flat_map(|p| p.role_mentions.iter().map(|m| m.role.as_str()));
        let texts = registry.iter().map(|p| p.text.as_str()).chain(roles);
        Self::build(max_markers, words, texts)
    }

    pub fn add(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn max_markers(&self) -> usize {
        self.max_markers
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
    }

    fn lookup(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(3)
    }
}

impl Tokenizer for WordVocab {
    fn tokenize_word(&self, word: &str) -> Vec<TokenId> {
        vec![self.lookup(word)]
    }

    fn tokenize_text(&self, text: &str) -> Vec<(TokenId, Range<usize>)> {
        split_pieces(text)
            .into_iter()
            .map(|r| (self.lookup(&text[r.clone()]), r))
            .collect()
    }

    fn bos(&self) -> TokenId {
        1
    }

    fn eos(&self) -> TokenId {
        2
    }

    fn pad(&self) -> TokenId {
        0
    }

    fn marker(&self, ordinal: usize, open: bool) -> Result<TokenId> {
        if ordinal == 0 || ordinal > self.max_markers {
            return Err(Error::InvalidArgument(format!(
                "marker ordinal {ordinal} outside 1..={}",
                self.max_markers
            )));
        }
        Ok((4 + 2 * (ordinal - 1) + usize::from(!open)) as TokenId)
    }

    fn vocab_size(&self) -> usize {
        self.tokens.len()
    }
}
