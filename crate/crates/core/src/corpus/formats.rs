//! Readers for the native JSONL interchange format and the preprocessed
//! shapes of ACE05 (DyGIE++ style), RAMS, WikiEvents and MLEE.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use super::{Argument, EaeInstance, EventRecord, Span};
use crate::error::{Error, Result};
use crate::prompts::PromptRegistry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CorpusFormat {
    Ace05,
    Rams,
    WikiEvents,
    Mlee,
    NativeJsonl,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ace05" | "ace" => Ok(Self::Ace05),
            "rams" => Ok(Self::Rams),
            "wikievents" => Ok(Self::WikiEvents),
            "mlee" => Ok(Self::Mlee),
            "native-jsonl" | "native" | "jsonl" => Ok(Self::NativeJsonl),
            other => Err(Error::InvalidArgument(format!("unknown corpus format `{other}`"))),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ace05 => "ace05",
            Self::Rams => "rams",
            Self::WikiEvents => "wikievents",
            Self::Mlee => "mlee",
            Self::NativeJsonl => "native-jsonl",
        })
    }
}

pub fn load_corpus(
    path: impl AsRef<Path>,
    format: CorpusFormat,
    registry: Option<&PromptRegistry>,
) -> Result<Vec<EaeInstance>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, format, registry)
}

/// Parses corpus text already in memory. Every returned instance has been
/// validated (span bounds, and types/roles when a registry is supplied).
pub fn parse_corpus(
    text: &str,
    format: CorpusFormat,
    registry: Option<&PromptRegistry>,
) -> Result<Vec<EaeInstance>> {
    let mut out = match format {
        CorpusFormat::NativeJsonl => parse_lines::<EaeInstance>(text)?,
        CorpusFormat::Ace05 => parse_lines::<DygieDoc>(text)?
            .into_iter()
            .map(DygieDoc::into_instances)
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect(),
        CorpusFormat::Rams => {
            let records = parse_lines::<RamsRecord>(text)?
                .into_iter()
                .map(RamsRecord::into_event_wise)
                .collect::<Result<Vec<_>>>()?;
            aggregate_rams(records)?
        }
        CorpusFormat::WikiEvents | CorpusFormat::Mlee => parse_lines::<WikiDoc>(text)?
            .into_iter()
            .map(|d| d.into_instance(format == CorpusFormat::Mlee))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect(),
    };
    for inst in &mut out {
        if let Some(reg) = registry {
            for ev in &mut inst.events {
                if let Some(p) = reg.get(&ev.event_type) {
                    ev.event_type = p.event_type.clone();
                    for arg in &mut ev.arguments {
                        if let Some(r) = p.canonical_role(&arg.role) {
                            arg.role = r.to_string();
                        }
                    }
                }
            }
        }
        inst.validate(registry)?;
    }
    Ok(out)
}

/// Writes instances in the native JSONL format.
pub fn write_native(mut w: impl Write, corpus: &[EaeInstance]) -> std::io::Result<()> {
    for inst in corpus {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn parse_lines<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::malformed(format!("line {}", n + 1), "<json>", e.to_string()))?;
        let doc_id = ["doc_id", "doc_key"]
            .iter()
            .find_map(|k| value.get(*k).and_then(|v| v.as_str()))
            .map(String::from)
            .unwrap_or_else(|| format!("line {}", n + 1));
        let parsed = serde_path_to_error::deserialize::<_, T>(value).map_err(|e| {
            let field = e.path().to_string();
            Error::malformed(&doc_id, field, e.into_inner().to_string())
        })?;
        out.push(parsed);
    }
    Ok(out)
}

fn inclusive(doc_id: &str, field: &str, s: i64, e: i64) -> Result<Span> {
    if s < 0 || e < s {
        return Err(Error::malformed(doc_id, field, format!("bad inclusive span [{s}, {e}]")));
    }
    Ok(Span::new(s as usize, e as usize + 1))
}

/// Event-wise record with the identifier of the context it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct EventWiseRecord {
    pub context_id: String,
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub event: EventRecord,
}

/// Merges event-wise records that share a context into one instance per
/// context, keeping contexts in first-seen order and events ordered by
/// trigger position.
pub fn aggregate_rams(records: Vec<EventWiseRecord>) -> Result<Vec<EaeInstance>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_ctx: HashMap<String, EaeInstance> = HashMap::new();
    for r in records {
        match by_ctx.get_mut(&r.context_id) {
            Some(inst) => {
                if inst.tokens != r.tokens {
                    return Err(Error::ConflictingContext(r.context_id));
                }
                inst.events.push(r.event);
            }
            None => {
                order.push(r.context_id.clone());
                by_ctx.insert(
                    r.context_id,
                    EaeInstance {
                        doc_id: r.doc_id,
                        tokens: r.tokens,
                        events: vec![r.event],
                    },
                );
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|k| {
            let mut inst = by_ctx.remove(&k).unwrap();
            inst.events.sort_by_key(|e| (e.trigger.start, e.trigger.end));
            inst
        })
        .collect())
}

#[derive(Deserialize)]
struct DygieDoc {
    doc_key: String,
    sentences: Vec<Vec<String>>,
    #[serde(default)]
    events: Vec<Vec<Vec<serde_json::Value>>>,
}

impl DygieDoc {
    /// One instance per sentence that carries events. Offsets in the
    /// source are document-level with inclusive ends.
    fn into_instances(self) -> Result<Vec<EaeInstance>> {
        if !self.events.is_empty() && self.events.len() != self.sentences.len() {
            return Err(Error::malformed(
                &self.doc_key,
                "events",
                "one event list per sentence expected",
            ));
        }
        let mut out = Vec::new();
        let mut offset = 0usize;
        for (k, (sent, evs)) in self.sentences.iter().zip(&self.events).enumerate() {
            let doc_id = format!("{}#s{k}", self.doc_key);
            let shift = |s: Span| -> Result<Span> {
                if s.start < offset || s.end > offset + sent.len() {
                    return Err(Error::malformed(&doc_id, "events", "span outside its sentence"));
                }
                Ok(Span::new(s.start - offset, s.end - offset))
            };
            let mut events = Vec::new();
            for (j, ev) in evs.iter().enumerate() {
                let field = format!("events[{k}][{j}]");
                let head = ev
                    .first()
                    .ok_or_else(|| Error::malformed(&doc_id, &field, "empty event"))?;
                let (t, ty) = match items(head) {
                    [serde_json::Value::Number(t), serde_json::Value::String(ty)] => {
                        (t.as_i64().unwrap_or(-1), ty.clone())
                    }
                    _ => return Err(Error::malformed(&doc_id, &field, "trigger must be [index, type]")),
                };
                let trigger = shift(inclusive(&doc_id, &field, t, t)?)?;
                let mut arguments = Vec::new();
                for a in &ev[1..] {
                    match items(a) {
                        [serde_json::Value::Number(s), serde_json::Value::Number(e), serde_json::Value::String(role)] => {
                            let span = inclusive(&doc_id, &field, s.as_i64().unwrap_or(-1), e.as_i64().unwrap_or(-1))?;
                            arguments.push(Argument {
                                role: role.clone(),
                                span: shift(span)?,
                            });
                        }
                        _ => {
                            return Err(Error::malformed(&doc_id, &field, "argument must be [start, end, role]"))
                        }
                    }
                }
                events.push(EventRecord {
                    trigger,
                    event_type: ty,
                    arguments,
                });
            }
            if !events.is_empty() {
                out.push(EaeInstance {
                    doc_id,
                    tokens: sent.clone(),
                    events,
                });
            }
            offset += sent.len();
        }
        Ok(out)
    }
}

fn items(v: &serde_json::Value) -> &[serde_json::Value] {
    v.as_array().map(Vec::as_slice).unwrap_or(&[])
}

#[derive(Deserialize)]
struct RamsRecord {
    doc_key: String,
    sentences: Vec<Vec<String>>,
    evt_triggers: Vec<(i64, i64, Vec<(String, f64)>)>,
    #[serde(default)]
    gold_evt_links: Vec<((i64, i64), (i64, i64), String)>,
}

impl RamsRecord {
    fn into_event_wise(self) -> Result<EventWiseRecord> {
        let id = &self.doc_key;
        let [(ts, te, types)] = self.evt_triggers.as_slice() else {
            return Err(Error::malformed(id, "evt_triggers", "exactly one trigger per record expected"));
        };
        let event_type = types
            .first()
            .map(|(t, _)| t.clone())
            .ok_or_else(|| Error::malformed(id, "evt_triggers", "trigger without type"))?;
        let trigger = inclusive(id, "evt_triggers", *ts, *te)?;
        let mut arguments = Vec::new();
        for (k, ((ls, le), (as_, ae), role)) in self.gold_evt_links.iter().enumerate() {
            let field = format!("gold_evt_links[{k}]");
            if inclusive(id, &field, *ls, *le)? != trigger {
                return Err(Error::malformed(id, field, "link does not point at the record's trigger"));
            }
            arguments.push(Argument {
                role: rams_role(role).to_string(),
                span: inclusive(id, &field, *as_, *ae)?,
            });
        }
        let tokens: Vec<String> = self.sentences.into_iter().flatten().collect();
        Ok(EventWiseRecord {
            context_id: tokens.join(" "),
            doc_id: self.doc_key,
            tokens,
            event: EventRecord {
                trigger,
                event_type,
                arguments,
            },
        })
    }
}

/// `evt089arg01victim` -> `victim`
fn rams_role(link: &str) -> &str {
    match link.find("arg") {
        Some(p) if link.starts_with("evt") => {
            let rest = &link[p + 3..];
            rest.trim_start_matches(|c: char| c.is_ascii_digit())
        }
        _ => link,
    }
}

#[derive(Deserialize)]
struct WikiDoc {
    doc_id: String,
    tokens: Vec<String>,
    #[serde(default)]
    entity_mentions: Vec<WikiEntity>,
    #[serde(default)]
    event_mentions: Vec<WikiEvent>,
}

#[derive(Deserialize)]
struct WikiEntity {
    id: String,
    start: usize,
    end: usize,
}

#[derive(Deserialize)]
struct WikiEvent {
    #[serde(default)]
    id: String,
    event_type: String,
    trigger: WikiTrigger,
    #[serde(default)]
    arguments: Vec<WikiArgument>,
}

#[derive(Deserialize)]
struct WikiTrigger {
    start: usize,
    end: usize,
}

#[derive(Deserialize)]
struct WikiArgument {
    entity_id: String,
    role: String,
}

impl WikiDoc {
    /// One document-level instance. With `nested`, an argument may name an
    /// event mention id, resolving to that event's trigger span.
    fn into_instance(self, nested: bool) -> Result<Option<EaeInstance>> {
        let mut spans: HashMap<&str, Span> = self
            .entity_mentions
            .iter()
            .map(|e| (e.id.as_str(), Span::new(e.start, e.end)))
            .collect();
        if nested {
            for ev in &self.event_mentions {
                spans
                    .entry(ev.id.as_str())
                    .or_insert(Span::new(ev.trigger.start, ev.trigger.end));
            }
        }
        let mut events = Vec::with_capacity(self.event_mentions.len());
        for (i, ev) in self.event_mentions.iter().enumerate() {
            let mut arguments = Vec::with_capacity(ev.arguments.len());
            for (j, a) in ev.arguments.iter().enumerate() {
                let span = spans.get(a.entity_id.as_str()).copied().ok_or_else(|| {
                    Error::malformed(
                        &self.doc_id,
                        format!("event_mentions[{i}].arguments[{j}].entity_id"),
                        format!("unknown mention `{}`", a.entity_id),
                    )
                })?;
                arguments.push(Argument {
                    role: a.role.clone(),
                    span,
                });
            }
            events.push(EventRecord {
                trigger: Span::new(ev.trigger.start, ev.trigger.end),
                event_type: ev.event_type.clone(),
                arguments,
            });
        }
        if events.is_empty() {
            return Ok(None);
        }
        Ok(Some(EaeInstance {
            doc_id: self.doc_id,
            tokens: self.tokens,
            events,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NATIVE: &str = r#"{"doc_id":"a","tokens":["x","kills","y"],"events":[{"trigger":[1,2],"type":"Life:Die","args":[{"role":"Victim","span":[2,3]}]}]}
{"doc_id":"b","tokens":["p","q","r","s"],"events":[{"trigger":[0,1],"type":"Life:Die","args":[]},{"trigger":[2,3],"type":"Life:Injure","args":[{"role":"Victim","span":[3,4]}]}]}
{"doc_id":"c","tokens":["p","q","r","s"],"events":[{"trigger":[0,1],"type":"Life:Die","args":[]},{"trigger":[1,2],"type":"Life:Die","args":[]},{"trigger":[2,3],"type":"Life:Die","args":[]}]}
"#;

    #[test]
    fn native_fixture_counts() {
        let c = parse_corpus(NATIVE, CorpusFormat::NativeJsonl, None).unwrap();
        let n: Vec<usize> = c.iter().map(|i| i.num_events()).collect();
        assert_eq!(n, vec![1, 2, 3]);
        assert!(parse_corpus("", CorpusFormat::NativeJsonl, None).unwrap().is_empty());
    }

    #[test]
    fn malformed_names_doc_and_field() {
        let bad = r#"{"doc_id":"zz","tokens":["a"],"events":[{"trigger":[0,"x"],"type":"T"}]}"#;
        let err = parse_corpus(bad, CorpusFormat::NativeJsonl, None).unwrap_err().to_string();
        assert!(err.contains("zz") && err.contains("events[0].trigger"), "{err}");
        let oob = r#"{"doc_id":"q","tokens":["a"],"events":[{"trigger":[0,2],"type":"T"}]}"#;
        let err = parse_corpus(oob, CorpusFormat::NativeJsonl, None).unwrap_err().to_string();
        assert!(err.contains("q") && err.contains("trigger"), "{err}");
    }

    #[test]
    fn unknown_type_is_named() {
        let reg = PromptRegistry::builtin_ace05();
        let bad = r#"{"doc_id":"u","tokens":["a"],"events":[{"trigger":[0,1],"type":"Made:Up"}]}"#;
        let err = parse_corpus(bad, CorpusFormat::NativeJsonl, Some(&reg)).unwrap_err();
        assert!(matches!(err, Error::UnknownEventType(t) if t == "Made:Up"));
    }

    #[test]
    fn dygie_sentences_become_instances() {
        let doc = r#"{"doc_key":"D","sentences":[["He","died","."],["Troops","attacked","the","town"]],"events":[[[[1,"Life.Die"],[0,0,"Victim"]]],[[[4,"Conflict.Attack"],[3,3,"Attacker"],[5,6,"Target"]]]]}"#;
        let c = parse_corpus(doc, CorpusFormat::Ace05, None).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].doc_id, "D#s1");
        assert_eq!(c[1].events[0].trigger, Span::new(1, 2));
        assert_eq!(c[1].events[0].arguments[1].span, Span::new(2, 4));
    }

    #[test]
    fn rams_records_aggregate_by_context() {
        let a = r#"{"doc_key":"k1","sentences":[["a","b","c","d","e","f","g","h","i","j"]],"evt_triggers":[[9,9,[["life.die.n/a",1.0]]]],"gold_evt_links":[[[9,9],[0,1],"evt001arg01victim"]]}"#;
        let b = r#"{"doc_key":"k2","sentences":[["a","b","c","d","e","f","g","h","i","j"]],"evt_triggers":[[4,4,[["conflict.attack.n/a",1.0]]]],"gold_evt_links":[]}"#;
        let c = parse_corpus(&format!("{a}\n{b}\n"), CorpusFormat::Rams, None).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].num_events(), 2);
        assert_eq!(c[0].events[0].trigger, Span::new(4, 5));
        assert_eq!(c[0].events[1].arguments[0].role, "victim");
    }

    #[test]
    fn aggregation_conflict_and_conservation() {
        let rec = |ctx: &str, toks: &[&str], t: usize| EventWiseRecord {
            context_id: ctx.into(),
            doc_id: ctx.into(),
            tokens: toks.iter().map(|s| s.to_string()).collect(),
            event: EventRecord {
                trigger: Span::new(t, t + 1),
                event_type: "T".into(),
                arguments: vec![],
            },
        };
        let one = aggregate_rams(vec![rec("c", &["a", "b"], 0)]).unwrap();
        assert_eq!(one[0].num_events(), 1);
        let err = aggregate_rams(vec![rec("c", &["a", "b"], 0), rec("c", &["a", "x"], 1)]);
        assert!(matches!(err, Err(Error::ConflictingContext(_))));
        let recs = vec![rec("c", &["a", "b"], 1), rec("d", &["z"], 0), rec("c", &["a", "b"], 0)];
        let agg = aggregate_rams(recs).unwrap();
        assert_eq!(super::super::total_events(&agg), 3);
        assert_eq!(agg[0].events[0].trigger.start, 0);
    }

    #[test]
    fn wiki_and_mlee_resolve_mentions() {
        let doc = r#"{"doc_id":"w","tokens":["VEGF","expression","regulates","growth"],"entity_mentions":[{"id":"e1","start":0,"end":1}],"event_mentions":[{"id":"ev1","event_type":"Gene expression","trigger":{"start":1,"end":2},"arguments":[{"entity_id":"e1","role":"Gene"}]},{"id":"ev2","event_type":"Regulation","trigger":{"start":2,"end":3},"arguments":[{"entity_id":"ev1","role":"Event/Entity"}]}]}"#;
        assert!(parse_corpus(doc, CorpusFormat::WikiEvents, None).is_err());
        let c = parse_corpus(doc, CorpusFormat::Mlee, None).unwrap();
        assert_eq!(c[0].events[1].arguments[0].span, Span::new(1, 2));
    }

    #[test]
    fn rams_role_prefix_is_stripped() {
        assert_eq!(rams_role("evt089arg01victim"), "victim");
        assert_eq!(rams_role("place"), "place");
    }
}
