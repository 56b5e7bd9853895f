use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{EaeInstance, Span};
use crate::error::{Error, Result};
use crate::tokenize::{TokenId, Tokenizer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarkedToken {
    Bos,
    Eos,
    Marker { ordinal: usize, open: bool },
    /// Subword of the word at this absolute index of the instance text.
    Text { word: usize },
}

/// Windowed text with `<T-i>`/`</T-i>` around every distinct selected
/// trigger, wrapped in `<s>` … `</s>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedText {
    pub ids: Vec<TokenId>,
    pub kinds: Vec<MarkedToken>,
    /// ordinal -> (position of `<T-i>`, position of `</T-i>`)
    pub marker_positions: BTreeMap<usize, (usize, usize)>,
    /// Words of the instance covered by the window.
    pub window: Span,
    /// For each window word (offset by `window.start`), its subword range.
    pub word_to_subword: Vec<Range<usize>>,
    /// Marker ordinal of each selected event, in the order given.
    pub event_ordinals: Vec<usize>,
}

impl MarkedText {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_markers(&self) -> usize {
        self.marker_positions.len()
    }

    pub fn is_text(&self, pos: usize) -> bool {
        matches!(self.kinds.get(pos), Some(MarkedToken::Text { .. }))
    }

    /// Text subword ids with sentinels and markers removed.
    pub fn strip(&self) -> Vec<TokenId> {
        self.ids
            .iter()
            .zip(&self.kinds)
            .filter(|(_, k)| matches!(k, MarkedToken::Text { .. }))
            .map(|(&id, _)| id)
            .collect()
    }

    /// Subword positions strictly between the markers of `ordinal`.
    pub fn trigger_positions(&self, ordinal: usize) -> Option<Range<usize>> {
        self.marker_positions.get(&ordinal).map(|&(o, c)| o + 1..c)
    }

    /// Half-open subword span of a word span, if it lies inside the window.
    pub fn subword_span(&self, words: Span) -> Option<Span> {
        if words.is_empty() || !self.window.contains(&words) {
            return None;
        }
        let first = &self.word_to_subword[words.start - self.window.start];
        let last = &self.word_to_subword[words.end - 1 - self.window.start];
        Some(Span::new(first.start, last.end))
    }

    /// Word span covering a half-open subword span, expanded to whole
    /// words. `None` when the span touches no text subword.
    pub fn word_span(&self, sub: Span) -> Option<Span> {
        let words: Vec<usize> = (sub.start..sub.end.min(self.len()))
            .filter_map(|p| match self.kinds[p] {
                MarkedToken::Text { word } => Some(word),
                _ => None,
            })
            .collect();
        let lo = *words.iter().min()?;
        let hi = *words.iter().max()?;
        Some(Span::new(lo, hi + 1))
    }
}

/// Marks the triggers of `selected` events, windowing the text to at most
/// `window` words around them.
pub fn mark_triggers(
    instance: &EaeInstance,
    selected: &[usize],
    window: usize,
    tokenizer: &dyn Tokenizer,
) -> Result<MarkedText> {
    if selected.is_empty() {
        return Err(Error::InvalidArgument("no events selected for marking".into()));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("context window must be positive".into()));
    }
    let mut triggers: Vec<Span> = Vec::with_capacity(selected.len());
    for &i in selected {
        let ev = instance.events.get(i).ok_or_else(|| {
            Error::InvalidArgument(format!("event {i} out of range in {}", instance.doc_id))
        })?;
        triggers.push(ev.trigger);
    }
    let mut distinct = triggers.clone();
    distinct.sort();
    distinct.dedup();
    for w in distinct.windows(2) {
        if w[0].overlaps(&w[1]) {
            return Err(Error::malformed(
                &instance.doc_id,
                "trigger",
                format!("triggers [{}, {}) and [{}, {}) overlap", w[0].start, w[0].end, w[1].start, w[1].end),
            ));
        }
    }

    let lo = distinct.iter().map(|s| s.start).min().unwrap_or(0);
    let hi = distinct.iter().map(|s| s.end).max().unwrap_or(0);
    if hi - lo > window {
        return Err(Error::WindowTooSmall {
            extent: hi - lo,
            window,
        });
    }
    let n = instance.tokens.len();
    let win = if n <= window {
        Span::new(0, n)
    } else {
        let mid = (lo + hi) / 2;
        let start = mid
            .saturating_sub(window / 2)
            .min(lo)
            .max(hi.saturating_sub(window))
            .min(n - window);
        Span::new(start, start + window)
    };

    let ordinal_of = |s: &Span| distinct.binary_search(s).unwrap() + 1;
    let mut opens: BTreeMap<usize, usize> = BTreeMap::new();
    let mut closes: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &distinct {
        opens.insert(s.start, ordinal_of(s));
        closes.insert(s.end - 1, ordinal_of(s));
    }

    let mut ids = vec![tokenizer.bos()];
    let mut kinds = vec![MarkedToken::Bos];
    let mut marker_positions: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut word_to_subword = Vec::with_capacity(win.len());
    for w in win.start..win.end {
        if let Some(&k) = opens.get(&w) {
            marker_positions.insert(k, (ids.len(), 0));
            ids.push(tokenizer.marker(k, true)?);
            kinds.push(MarkedToken::Marker { ordinal: k, open: true });
        }
        let begin = ids.len();
        for id in tokenizer.tokenize_word(&instance.tokens[w]) {
            ids.push(id);
            kinds.push(MarkedToken::Text { word: w });
        }
        word_to_subword.push(begin..ids.len());
        if let Some(&k) = closes.get(&w) {
            marker_positions.get_mut(&k).unwrap().1 = ids.len();
            ids.push(tokenizer.marker(k, false)?);
            kinds.push(MarkedToken::Marker { ordinal: k, open: false });
        }
    }
    ids.push(tokenizer.eos());
    kinds.push(MarkedToken::Eos);

    Ok(MarkedText {
        ids,
        kinds,
        marker_positions,
        window: win,
        word_to_subword,
        event_ordinals: triggers.iter().map(ordinal_of).collect(),
    })
}
