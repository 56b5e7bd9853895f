//! Event argument extraction instances: one context with all of its
//! co-occurring events, loaders for the benchmark formats, trigger marking
//! and a synthetic corpus generator.

mod formats;
mod marking;
mod synth;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompts::PromptRegistry;

pub use formats::{
    aggregate_rams, load_corpus, parse_corpus, write_native, CorpusFormat, EventWiseRecord,
};
pub use marking::{mark_triggers, MarkedText, MarkedToken};
pub use synth::{default_vocab, synth_corpus, SynthConfig};

/// Half-open word (or subword) interval `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const EMPTY: Span = Span { start: 0, end: 0 };

    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Argument {
    pub role: String,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub trigger: Span,
    #[serde(rename = "type")]
    pub event_type: String,
    #[serde(rename = "args", default)]
    pub arguments: Vec<Argument>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EaeInstance {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub events: Vec<EventRecord>,
}

impl EaeInstance {
    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    /// Checks span bounds, the non-empty event list and, when a registry is
    /// given, that every event type and argument role is registered.
    pub fn validate(&self, registry: Option<&PromptRegistry>) -> Result<()> {
        let len = self.tokens.len();
        if self.events.is_empty() {
            return Err(Error::malformed(&self.doc_id, "events", "instance has no events"));
        }
        let check = |span: &Span, field: String| -> Result<()> {
            if span.end <= span.start || span.end > len {
                return Err(Error::malformed(
                    &self.doc_id,
                    field,
                    format!("span [{}, {}) invalid for text of {} words", span.start, span.end, len),
                ));
            }
            Ok(())
        };
        for (i, ev) in self.events.iter().enumerate() {
            check(&ev.trigger, format!("events[{i}].trigger"))?;
            for (j, arg) in ev.arguments.iter().enumerate() {
                check(&arg.span, format!("events[{i}].args[{j}].span"))?;
            }
            if let Some(reg) = registry {
                let prompt = reg
                    .get(&ev.event_type)
                    .ok_or_else(|| Error::UnknownEventType(ev.event_type.clone()))?;
                for arg in &ev.arguments {
                    if !prompt.has_role(&arg.role) {
                        return Err(Error::UnknownRole {
                            event_type: ev.event_type.clone(),
                            role: arg.role.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Indices of events ordered by trigger start (stable on ties).
    pub fn events_in_trigger_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.events.len()).collect();
        idx.sort_by_key(|&i| (self.events[i].trigger.start, self.events[i].trigger.end));
        idx
    }

    /// Greedily groups events (in trigger order) so that each group's
    /// trigger extent fits inside `window` words. Returns one group when
    /// everything fits.
    pub fn window_groups(&self, window: usize) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let (mut lo, mut hi) = (0, 0);
        for i in self.events_in_trigger_order() {
            let t = self.events[i].trigger;
            match groups.last_mut() {
                Some(g) if hi.max(t.end) - lo <= window => {
                    g.push(i);
                    hi = hi.max(t.end);
                }
                _ => {
                    groups.push(vec![i]);
                    lo = t.start;
                    hi = t.end;
                }
            }
        }
        groups
    }

    pub fn total_arguments(&self) -> usize {
        self.events.iter().map(|e| e.arguments.len()).sum()
    }

    /// Distinct event types in order of first occurrence among `selected`.
    pub fn distinct_types(&self, selected: &[usize]) -> Vec<String> {
        let mut seen = BTreeSet::new();
        selected
            .iter()
            .map(|&i| &self.events[i].event_type)
            .filter(|t| seen.insert((*t).clone()))
            .cloned()
            .collect()
    }
}

pub fn total_events(corpus: &[EaeInstance]) -> usize {
    corpus.iter().map(|i| i.events.len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(triggers: &[(usize, usize)]) -> EaeInstance {
        EaeInstance {
            doc_id: "d".into(),
            tokens: (0..400).map(|i| format!("w{i}")).collect(),
            events: triggers
                .iter()
                .map(|&(s, e)| EventRecord {
                    trigger: Span::new(s, e),
                    event_type: "T".into(),
                    arguments: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn rejects_bad_spans() {
        let mut x = inst(&[(3, 4)]);
        assert!(x.validate(None).is_ok());
        x.events[0].trigger = Span::new(4, 4);
        let err = x.validate(None).unwrap_err().to_string();
        assert!(err.contains("events[0].trigger"), "{err}");
        x.events[0].trigger = Span::new(399, 401);
        assert!(x.validate(None).is_err());
    }

    #[test]
    fn window_groups_split_far_triggers() {
        let x = inst(&[(300, 301), (2, 3), (10, 12)]);
        assert_eq!(x.window_groups(250), vec![vec![1, 2], vec![0]]);
        assert_eq!(x.window_groups(400), vec![vec![1, 2, 0]]);
        assert_eq!(inst(&[(5, 6)]).window_groups(1), vec![vec![0]]);
    }

    #[test]
    fn span_serializes_as_pair() {
        let s: Span = serde_json::from_str("[2,5]").unwrap();
        assert_eq!(s, Span::new(2, 5));
        assert_eq!(serde_json::to_string(&s).unwrap(), "[2,5]");
    }
}
