//! Deterministic synthetic corpora for desk-scale tests.
//!
//! The vocabulary is partitioned into trigger words (two per event type),
//! one cue word per role, entity words and filler. Every event becomes a
//! clause `[cue entity…]* trigger [cue entity…]*`; a role's cue word always
//! precedes its argument span, which keeps the corpus learnable. Later
//! events may reuse an earlier argument span (overlapping events) or take
//! an earlier trigger as an argument (nested events).

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Argument, EaeInstance, EventRecord, Span};
use crate::error::{Error, Result};
use crate::prompts::PromptRegistry;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_instances: usize,
    pub max_events: usize,
    /// Probability that an event after the first reuses an earlier argument.
    pub p_shared_argument: f64,
    /// Probability that an event after the first takes an earlier trigger
    /// as an argument.
    pub p_nested: f64,
    /// Probability that an event after the first reuses an earlier trigger.
    pub p_shared_trigger: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_instances: 50,
            max_events: 4,
            p_shared_argument: 0.3,
            p_nested: 0.2,
            p_shared_trigger: 0.05,
        }
    }
}

const FILLER: usize = 12;
const ENTITIES: usize = 12;

/// Pseudo-words usable as a default vocabulary.
pub fn default_vocab(n: usize) -> Vec<String> {
    const ON: [&str; 8] = ["b", "d", "k", "l", "m", "n", "r", "t"];
    const NU: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut out = Vec::with_capacity(n);
    let mut i = 0usize;
    while out.len() < n {
        let (a, b, c) = (i % 40, (i / 40) % 40, i / 1600);
        let syl = |k: usize| format!("{}{}", ON[k % 8], NU[k / 8 % 5]);
        let mut w = format!("{}{}", syl(a), syl(b));
        if c > 0 {
            w.push_str(&syl(c));
        }
        out.push(w);
        i += 1;
    }
    out
}

struct Lexicon<'a> {
    triggers: Vec<[&'a str; 2]>,
    cues: Vec<(String, &'a str)>,
    entities: &'a [String],
    filler: &'a [String],
}

impl<'a> Lexicon<'a> {
    fn new(vocab: &'a [String], registry: &PromptRegistry) -> Result<Self> {
        let mut roles: Vec<String> = Vec::new();
        for p in registry.iter() {
            for r in p.roles() {
                if !roles.iter().any(|x| x == r) {
                    roles.push(r.to_string());
                }
            }
        }
        let need = 2 * registry.len() + roles.len() + ENTITIES + FILLER;
        if registry.is_empty() || vocab.len() < need {
            return Err(Error::InvalidArgument(format!(
                "vocabulary of {} words cannot realize a schema of {} types and {} roles (need {need})",
                vocab.len(),
                registry.len(),
                roles.len()
            )));
        }
        let mut it = vocab.iter().map(String::as_str);
        let triggers = (0..registry.len())
            .map(|_| [it.next().unwrap(), it.next().unwrap()])
            .collect();
        let used = 2 * registry.len() + roles.len();
        let cues = roles.into_iter().map(|r| (r, it.next().unwrap())).collect();
        let rest = &vocab[used..];
        let split = ENTITIES.max(rest.len() / 3);
        Ok(Lexicon {
            triggers,
            cues,
            entities: &rest[..split],
            filler: &rest[split..],
        })
    }

    fn cue(&self, role: &str) -> &'a str {
        self.cues.iter().find(|(r, _)| r == role).unwrap().1
    }
}

/// Generates `n_instances` instances with 1..=`max_events` events each.
pub fn synth_corpus(
    config: &SynthConfig,
    vocab: &[String],
    registry: &PromptRegistry,
) -> Result<Vec<EaeInstance>> {
    if config.max_events == 0 {
        return Err(Error::InvalidArgument("max_events must be at least 1".into()));
    }
    let mut uniq = vocab.to_vec();
    uniq.sort();
    uniq.dedup();
    if uniq.len() != vocab.len() {
        return Err(Error::InvalidArgument("vocabulary contains duplicates".into()));
    }
    let lex = Lexicon::new(vocab, registry)?;
    let types: Vec<&crate::prompts::PromptTemplate> = registry.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.n_instances);

    for k in 0..config.n_instances {
        let n_events = rng.random_range(1..=config.max_events);
        let mut tokens: Vec<String> = Vec::new();
        let mut events: Vec<EventRecord> = Vec::new();
        let push_filler = |tokens: &mut Vec<String>, rng: &mut ChaCha8Rng, lo: usize, hi: usize| {
            for _ in 0..rng.random_range(lo..=hi) {
                tokens.push(lex.filler.choose(rng).unwrap().clone());
            }
        };
        push_filler(&mut tokens, &mut rng, 0, 3);

        for e in 0..n_events {
            let ti = rng.random_range(0..types.len());
            let prompt = types[ti];
            // reuse of an earlier trigger: no new clause
            if e > 0 && rng.random_bool(config.p_shared_trigger) {
                let prev = events[rng.random_range(0..events.len())].trigger;
                events.push(EventRecord {
                    trigger: prev,
                    event_type: prompt.event_type.clone(),
                    arguments: Vec::new(),
                });
                continue;
            }
            let mut roles: Vec<&str> = prompt
                .roles()
                .into_iter()
                .filter(|_| rng.random_bool(0.6))
                .collect();
            roles.shuffle(&mut rng);
            let split = rng.random_range(0..=roles.len());
            let mut arguments = Vec::new();
            let clause_arg = |tokens: &mut Vec<String>, rng: &mut ChaCha8Rng, role: &str| {
                tokens.push(lex.cue(role).to_string());
                let start = tokens.len();
                for _ in 0..rng.random_range(1..=3) {
                    tokens.push(lex.entities.choose(rng).unwrap().clone());
                }
                Argument {
                    role: role.to_string(),
                    span: Span::new(start, tokens.len()),
                }
            };
            for r in &roles[..split] {
                arguments.push(clause_arg(&mut tokens, &mut rng, r));
            }
            let t = tokens.len();
            tokens.push(lex.triggers[ti][rng.random_range(0..2)].to_string());
            let trigger = Span::new(t, t + 1);
            for r in &roles[split..] {
                arguments.push(clause_arg(&mut tokens, &mut rng, r));
            }

            if e > 0 {
                let all_roles = prompt.roles();
                let free: Vec<&str> = all_roles
                    .iter()
                    .copied()
                    .filter(|r| !arguments.iter().any(|a| a.role == *r))
                    .collect();
                let force_shared = k % 4 == 2 && e == 1;
                let force_nested = k % 4 == 3 && e == 1;
                if let Some(&role) = free.first() {
                    if force_shared || rng.random_bool(config.p_shared_argument) {
                        let donors: Vec<Span> = events
                            .iter()
                            .flat_map(|ev| ev.arguments.iter().map(|a| a.span))
                            .collect();
                        if let Some(&span) = donors.choose(&mut rng) {
                            arguments.push(Argument {
                                role: role.to_string(),
                                span,
                            });
                        }
                    }
                }
                if let Some(&role) = free.get(1).or(free.first()) {
                    let taken = arguments.iter().any(|a| a.role == role);
                    if !taken && (force_nested || rng.random_bool(config.p_nested)) {
                        let prev = events[rng.random_range(0..events.len())].trigger;
                        arguments.push(Argument {
                            role: role.to_string(),
                            span: prev,
                        });
                    }
                }
            }
            events.push(EventRecord {
                trigger,
                event_type: prompt.event_type.clone(),
                arguments,
            });
            push_filler(&mut tokens, &mut rng, 1, 4);
        }
        let inst = EaeInstance {
            doc_id: format!("synth-{}-{k}", config.seed),
            tokens,
            events,
        };
        inst.validate(Some(registry))?;
        out.push(inst);
    }
    Ok(out)
}
