//! Model inputs for one sample: marked text, slotted table, mask, table
//! initialization plan, span candidates and gold targets.

use tabeae_core::corpus::{mark_triggers, EaeInstance, MarkedText, Span};
use tabeae_core::mask::{build_structure_mask, StructureMask};
use tabeae_core::prompts::PromptRegistry;
use tabeae_core::scheme::{Ablation, Sample, TrainConfig};
use tabeae_core::span::SpanCandidates;
use tabeae_core::table::{build_table, SlottedTable, TablePlan};
use tabeae_core::tokenize::{TokenId, Tokenizer};

use crate::error::{ModelError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SampleInput {
    pub instance: usize,
    pub events: Vec<usize>,
    pub marked: MarkedText,
    pub table: SlottedTable,
    /// Token ids of each header prompt.
    pub prompt_ids: Vec<Vec<TokenId>>,
    pub plan: TablePlan,
    pub mask: StructureMask,
    pub candidates: SpanCandidates,
    /// Per table row, gold `(role, subword span)` pairs inside the window.
    pub gold: Vec<Vec<(String, Span)>>,
}

impl SampleInput {
    pub fn slot_positions(&self) -> Vec<usize> {
        self.table.slots().map(|s| s.position).collect()
    }

    /// Row-major `[table length x (text + prompt tokens)]` plan weights.
    pub fn plan_matrix(&self) -> (Vec<f64>, usize, usize) {
        let mut offsets = Vec::with_capacity(self.prompt_ids.len());
        let mut total = self.marked.len();
        for p in &self.prompt_ids {
            offsets.push(total - self.marked.len());
            total += p.len();
        }
        let m = self.plan.dense(self.marked.len(), &offsets, total);
        (m.iter().copied().collect(), self.table.len(), total)
    }
}

pub struct Featurizer<'a> {
    pub registry: PromptRegistry,
    pub tokenizer: &'a dyn Tokenizer,
    pub window: usize,
    pub max_span_length: usize,
    pub max_encoder_len: usize,
    pub max_decoder_len: usize,
    pub ablation: Ablation,
    /// Threads used by `build_all`.
    pub workers: usize,
}

impl<'a> Featurizer<'a> {
    /// Uses bare role names instead of prompts when the ablation says so.
    pub fn new(registry: &PromptRegistry, tokenizer: &'a dyn Tokenizer, cfg: &TrainConfig, ablation: Ablation) -> Self {
        let registry = if ablation.prompts {
            registry.clone()
        } else {
            registry.without_prompts()
        };
        Featurizer {
            registry,
            tokenizer,
            window: cfg.context_window,
            max_span_length: cfg.max_span_length,
            max_encoder_len: cfg.max_encoder_len,
            max_decoder_len: cfg.max_decoder_len,
            ablation,
            workers: 1,
        }
    }

    /// Inputs of many samples of `corpus`, in order, built on `workers`
    /// threads.
    pub fn build_all(&self, corpus: &[EaeInstance], samples: &[Sample]) -> Result<Vec<SampleInput>> {
        let workers = self.workers.clamp(1, samples.len().max(1));
        if workers == 1 {
            return samples.iter().map(|s| self.build(&corpus[s.instance], s)).collect();
        }
        let chunk = samples.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = samples
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|s| self.build(&corpus[s.instance], s)).collect::<Result<Vec<_>>>()))
                .collect();
            let mut out = Vec::with_capacity(samples.len());
            for h in handles {
                out.extend(h.join().expect("featurizer thread panicked")?);
            }
            Ok(out)
        })
    }

    pub fn build(&self, x: &EaeInstance, sample: &Sample) -> Result<SampleInput> {
        let marked = mark_triggers(x, &sample.events, self.window, self.tokenizer)?;
        if marked.len() > self.max_encoder_len {
            return Err(ModelError::Overlength {
                what: "marked text",
                len: marked.len(),
                max: self.max_encoder_len,
            });
        }
        let table = build_table(&marked, x, &sample.events, &self.registry, self.tokenizer)?;
        if table.len() > self.max_decoder_len {
            return Err(ModelError::Overlength {
                what: "slotted table",
                len: table.len(),
                max: self.max_decoder_len,
            });
        }
        let prompt_ids: Vec<Vec<TokenId>> = table.header.prompts.iter().map(|p| p.ids.clone()).collect();
        if let Some(p) = prompt_ids.iter().find(|p| p.len() > self.max_encoder_len) {
            return Err(ModelError::Overlength {
                what: "prompt",
                len: p.len(),
                max: self.max_encoder_len,
            });
        }
        let plan = table.embedding_plan(&marked)?;
        let mask = if self.ablation.saam {
            build_structure_mask(&table, self.ablation.mask)?
        } else {
            StructureMask::full(table.len())
        };
        let gold = table
            .rows
            .iter()
            .map(|row| {
                x.events[row.event]
                    .arguments
                    .iter()
                    .filter_map(|a| marked.subword_span(a.span).map(|s| (a.role.clone(), s)))
                    .collect()
            })
            .collect();
        Ok(SampleInput {
            instance: sample.instance,
            events: sample.events.clone(),
            candidates: SpanCandidates::from_marked(&marked, self.max_span_length),
            marked,
            table,
            prompt_ids,
            plan,
            mask,
            gold,
        })
    }
}
