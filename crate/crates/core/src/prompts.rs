//! Event-schema prompts keyed by event type. Each prompt is natural text in
//! which some spans name argument roles; every such role mention becomes a
//! column of the slotted table, so a role mentioned twice gives two slots.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::error::{Error, Result};
use crate::tokenize::{TokenId, Tokenizer};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleMention {
    pub role: String,
    /// Character (not byte) offsets into the prompt text, half-open.
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    #[serde(rename = "type")]
    pub event_type: String,
    #[serde(rename = "prompt")]
    pub text: String,
    pub role_mentions: Vec<RoleMention>,
}

/// Prompt token ids plus, per role mention, the token range it covers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedPrompt {
    pub ids: Vec<TokenId>,
    pub mentions: Vec<Range<usize>>,
}

impl PromptTemplate {
    /// Parses `{Role}` / `{Mention text|Role}` markup.
    ///
    /// ```
    /// use tabeae_core::prompts::PromptTemplate;
    /// let p = PromptTemplate::from_markup("Life:Die", "{Victim} died by {Killer|Agent}").unwrap();
    /// assert_eq!(p.text, "Victim died by Killer");
    /// assert_eq!(p.role_mentions[1].role, "Agent");
    /// ```
    pub fn from_markup(event_type: &str, markup: &str) -> Result<Self> {
        let mut text = String::new();
        let mut mentions = Vec::new();
        let mut rest = markup;
        while let Some(open) = rest.find('{') {
            text.push_str(&rest[..open]);
            let close = rest[open..]
                .find('}')
                .map(|c| c + open)
                .ok_or_else(|| Error::Registry(format!("unclosed `{{` in prompt of {event_type}")))?;
            let inner = &rest[open + 1..close];
            let (shown, role) = inner.split_once('|').unwrap_or((inner, inner));
            let char_start = text.chars().count();
            text.push_str(shown);
            mentions.push(RoleMention {
                role: role.trim().to_string(),
                char_start,
                char_end: text.chars().count(),
            });
            rest = &rest[close + 1..];
        }
        text.push_str(rest);
        let p = PromptTemplate {
            event_type: event_type.to_string(),
            text,
            role_mentions: mentions,
        };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        let n = self.text.chars().count();
        let mut last_end = 0;
        for m in &self.role_mentions {
            if m.char_start >= m.char_end || m.char_end > n || m.char_start < last_end {
                return Err(Error::Registry(format!(
                    "role mention `{}` of {} has bad span [{}, {})",
                    m.role, self.event_type, m.char_start, m.char_end
                )));
            }
            last_end = m.char_end;
        }
        Ok(())
    }

    /// Role set of the event type, in first-mention order.
    pub fn roles(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.role_mentions
            .iter()
            .map(|m| m.role.as_str())
            .filter(|r| seen.insert(*r))
            .collect()
    }

    pub fn has_role(&self, role: &str) -> bool {
        self.role_mentions.iter().any(|m| m.role == role)
    }

    /// Registered spelling of `role`, matched case- and punctuation-insensitively.
    pub fn canonical_role(&self, role: &str) -> Option<&str> {
        let key = canonical_key(role);
        self.role_mentions
            .iter()
            .find(|m| canonical_key(&m.role) == key)
            .map(|m| m.role.as_str())
    }

    /// Number of columns (slots per row) each role gets.
    pub fn capacity(&self, role: &str) -> usize {
        self.role_mentions.iter().filter(|m| m.role == role).count()
    }

    pub fn tokenize(&self, tokenizer: &dyn Tokenizer) -> Result<TokenizedPrompt> {
        let pieces = tokenizer.tokenize_text(&self.text);
        let byte_of = |c: usize| {
            self.text
                .char_indices()
                .nth(c)
                .map(|(b, _)| b)
                .unwrap_or(self.text.len())
        };
        let mut mentions = Vec::with_capacity(self.role_mentions.len());
        for m in &self.role_mentions {
            let (bs, be) = (byte_of(m.char_start), byte_of(m.char_end));
            let covered: Vec<usize> = pieces
                .iter()
                .enumerate()
                .filter(|(_, (_, r))| r.start < be && bs < r.end)
                .map(|(i, _)| i)
                .collect();
            match (covered.first(), covered.last()) {
                (Some(&a), Some(&b)) => mentions.push(a..b + 1),
                _ => {
                    return Err(Error::Registry(format!(
                        "role mention `{}` of {} covers no token",
                        m.role, self.event_type
                    )))
                }
            }
        }
        Ok(TokenizedPrompt {
            ids: pieces.into_iter().map(|(id, _)| id).collect(),
            mentions,
        })
    }

    /// The prompt reduced to its bare role names, one per mention, so slot
    /// capacity is unchanged.
    pub fn bare_roles(&self) -> PromptTemplate {
        let mut text = String::new();
        let mut mentions = Vec::with_capacity(self.role_mentions.len());
        for m in &self.role_mentions {
            if !text.is_empty() {
                text.push(' ');
            }
            let start = text.chars().count();
            text.push_str(&m.role);
            mentions.push(RoleMention {
                role: m.role.clone(),
                char_start: start,
                char_end: text.chars().count(),
            });
        }
        PromptTemplate {
            event_type: self.event_type.clone(),
            text,
            role_mentions: mentions,
        }
    }
}

/// Lower-cased alphanumerics only: `Life.Die`, `life:die` and `Life_Die`
/// share a key.
pub fn canonical_key(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct PromptRegistry {
    prompts: Vec<PromptTemplate>,
    index: HashMap<String, usize>,
}

impl PartialEq for PromptRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.prompts == other.prompts
    }
}

impl PromptRegistry {
    pub fn new(prompts: Vec<PromptTemplate>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, p) in prompts.iter().enumerate() {
            p.check()?;
            if index.insert(canonical_key(&p.event_type), i).is_some() {
                return Err(Error::Registry(format!("duplicate event type `{}`", p.event_type)));
            }
        }
        Ok(PromptRegistry { prompts, index })
    }

    /// One JSON record per line: `{type, prompt, role_mentions}`.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let prompts = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<PromptTemplate>, _>>()?;
        Self::new(prompts)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for p in &self.prompts {
            s.push_str(&serde_json::to_string(p).expect("prompt serializes"));
            s.push('\n');
        }
        s
    }

    /// Git blob hash of the JSONL serialization.
    pub fn content_hash(&self) -> String {
        let body = self.to_jsonl();
        let mut h = Sha1::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(body.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn builtin_ace05() -> Self {
        Self::from_jsonl(include_str!("../data/prompts_ace05.jsonl")).expect("builtin ACE05 registry")
    }

    pub fn builtin_mlee() -> Self {
        Self::from_jsonl(include_str!("../data/prompts_mlee.jsonl")).expect("builtin MLEE registry")
    }

    pub fn get(&self, event_type: &str) -> Option<&PromptTemplate> {
        self.index
            .get(&canonical_key(event_type))
            .map(|&i| &self.prompts[i])
    }

    pub fn require(&self, event_type: &str) -> Result<&PromptTemplate> {
        self.get(event_type)
            .ok_or_else(|| Error::UnknownEventType(event_type.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.prompts.iter()
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// Registry restricted to the given event types, in the given order.
    pub fn subset(&self, types: &[&str]) -> Result<Self> {
        Self::new(
            types
                .iter()
                .map(|t| self.require(t).cloned())
                .collect::<Result<Vec<_>>>()?,
        )
    }

    /// Registry whose prompts are replaced by bare role-name sequences.
    pub fn without_prompts(&self) -> Self {
        Self::new(self.prompts.iter().map(PromptTemplate::bare_roles).collect())
            .expect("bare prompts stay well formed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::WordVocab;

    #[test]
    fn builtins_load() {
        let ace = PromptRegistry::builtin_ace05();
        assert_eq!(ace.len(), 33);
        let mlee = PromptRegistry::builtin_mlee();
        assert_eq!(mlee.len(), 23);
        let ge = mlee.get("Gene_expression").unwrap();
        assert_eq!(ge.text, "expression of Gene and Gene ( and Gene )");
        assert_eq!(ge.capacity("Gene"), 3);
        assert_eq!(ace.get("life.die").unwrap().event_type, "Life:Die");
    }

    #[test]
    fn mention_tokens_cover_multiword_roles() {
        let mlee = PromptRegistry::builtin_mlee();
        let p = mlee.get("Development").unwrap();
        let v = WordVocab::build(1, [], [p.text.as_str()]);
        let t = p.tokenize(&v).unwrap();
        assert_eq!(t.mentions, vec![0..2]);
        assert_eq!(t.ids.len(), 5);
    }

    #[test]
    fn bare_roles_keep_capacity() {
        let p = PromptTemplate::from_markup("T", "{Victim} (and {Victim}) at {Place}").unwrap();
        let b = p.bare_roles();
        assert_eq!(b.text, "Victim Victim Place");
        assert_eq!(b.capacity("Victim"), 2);
    }

    #[test]
    fn hash_is_git_blob_sha1() {
        let reg = PromptRegistry::new(vec![]).unwrap();
        // `git hash-object` of an empty file
        assert_eq!(reg.content_hash(), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    }

    #[test]
    fn bad_markup_rejected() {
        assert!(PromptTemplate::from_markup("T", "{Victim died").is_err());
        let dup = vec![
            PromptTemplate::from_markup("A:B", "{X}").unwrap(),
            PromptTemplate::from_markup("a.b", "{Y}").unwrap(),
        ];
        assert!(PromptRegistry::new(dup).is_err());
    }
}
