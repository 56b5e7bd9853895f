//! Slotted table construction.
//!
//! The column header concatenates the prompts of the distinct event types
//! (first-occurrence order). Each selected event contributes a row made of
//! its trigger tokens followed by one slot per role mention of its prompt.
//! Table positions run header first, then rows in trigger order.

use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::{EaeInstance, MarkedText};
use crate::error::{Error, Result};
use crate::prompts::PromptRegistry;
use crate::tokenize::{TokenId, Tokenizer};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeaderPrompt {
    pub event_type: String,
    pub ids: Vec<TokenId>,
    /// Header positions covered by this prompt.
    pub range: Range<usize>,
    /// Columns contributed by this prompt.
    pub columns: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Column {
    pub role: String,
    pub prompt: usize,
    /// Header positions of the role mention.
    pub tokens: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnHeader {
    pub prompts: Vec<HeaderPrompt>,
    pub columns: Vec<Column>,
    pub len: usize,
}

impl ColumnHeader {
    pub fn prompt_of(&self, event_type: &str) -> Option<usize> {
        self.prompts.iter().position(|p| p.event_type == event_type)
    }
}

/// Concatenates the prompts of `event_types`, one occurrence per distinct
/// type, and turns every role mention into a column.
pub fn build_column_header(
    event_types: &[String],
    registry: &PromptRegistry,
    tokenizer: &dyn Tokenizer,
) -> Result<ColumnHeader> {
    let mut prompts: Vec<HeaderPrompt> = Vec::new();
    let mut columns = Vec::new();
    let mut len = 0;
    for ty in event_types {
        let template = registry.require(ty)?;
        if prompts.iter().any(|p| p.event_type == template.event_type) {
            continue;
        }
        let tok = template.tokenize(tokenizer)?;
        let first_col = columns.len();
        for (m, r) in template.role_mentions.iter().zip(&tok.mentions) {
            columns.push(Column {
                role: m.role.clone(),
                prompt: prompts.len(),
                tokens: len + r.start..len + r.end,
            });
        }
        let n = tok.ids.len();
        prompts.push(HeaderPrompt {
            event_type: template.event_type.clone(),
            ids: tok.ids,
            range: len..len + n,
            columns: first_col..columns.len(),
        });
        len += n;
    }
    Ok(ColumnHeader {
        prompts,
        columns,
        len,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SlotCell {
    pub role: String,
    pub column: usize,
    pub event_row: usize,
    /// Table position of the slot.
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableRow {
    /// Index of the event in the instance.
    pub event: usize,
    /// Marker ordinal of the row's trigger.
    pub ordinal: usize,
    /// Table positions of the trigger cell.
    pub trigger: Range<usize>,
    /// Positions of the trigger tokens in the marked text.
    pub source: Range<usize>,
    pub slots: Vec<SlotCell>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    HeaderRole { prompt: usize, column: usize },
    HeaderOther { prompt: usize },
    Trigger { row: usize },
    Slot { row: usize, column: usize },
}

impl CellKind {
    pub fn is_header(&self) -> bool {
        matches!(self, CellKind::HeaderRole { .. } | CellKind::HeaderOther { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlottedTable {
    pub header: ColumnHeader,
    pub rows: Vec<TableRow>,
    pub layout: Vec<CellKind>,
}

impl SlottedTable {
    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    pub fn num_slots(&self) -> usize {
        self.rows.iter().map(|r| r.slots.len()).sum()
    }

    /// All slots in table order.
    pub fn slots(&self) -> impl Iterator<Item = &SlotCell> {
        self.rows.iter().flat_map(|r| r.slots.iter())
    }

    /// A table made of the header alone.
    pub fn header_only(header: ColumnHeader) -> Self {
        let layout = header_layout(&header);
        SlottedTable {
            header,
            rows: Vec::new(),
            layout,
        }
    }

    /// Where each table position takes its initial vector from.
    pub fn embedding_plan(&self, marked: &MarkedText) -> Result<TablePlan> {
        let mut weights = Vec::with_capacity(self.len());
        let mut provenance = Vec::with_capacity(self.len());
        for p in &self.header.prompts {
            for q in 0..p.range.len() {
                let prompt = self.header.prompts.iter().position(|x| std::ptr::eq(x, p)).unwrap();
                weights.push(vec![(Source::Prompt { prompt, pos: q }, 1.0)]);
                provenance.push(Provenance::HeaderEncoding);
            }
        }
        for row in &self.rows {
            for s in row.source.clone() {
                weights.push(vec![(Source::Text(s), 1.0)]);
                provenance.push(Provenance::TriggerCopy);
            }
            let (open, close) = *marked.marker_positions.get(&row.ordinal).ok_or_else(|| {
                Error::InvalidArgument(format!("trigger ordinal {} is not marked", row.ordinal))
            })?;
            for slot in &row.slots {
                let col = &self.header.columns[slot.column];
                let prompt = &self.header.prompts[col.prompt];
                let n = col.tokens.len() as f64;
                let mut w: Vec<(Source, f64)> = col
                    .tokens
                    .clone()
                    .map(|h| {
                        (
                            Source::Prompt {
                                prompt: col.prompt,
                                pos: h - prompt.range.start,
                            },
                            0.5 / n,
                        )
                    })
                    .collect();
                w.push((Source::Text(open), 0.25));
                w.push((Source::Text(close), 0.25));
                weights.push(w);
                provenance.push(Provenance::SlotAverage);
            }
        }
        Ok(TablePlan {
            weights,
            provenance,
        })
    }
}

fn header_layout(header: &ColumnHeader) -> Vec<CellKind> {
    let mut layout = Vec::with_capacity(header.len);
    for (j, p) in header.prompts.iter().enumerate() {
        for pos in p.range.clone() {
            let column = header.columns[p.columns.clone()]
                .iter()
                .position(|c| c.tokens.contains(&pos))
                .map(|c| c + p.columns.start);
            layout.push(match column {
                Some(column) => CellKind::HeaderRole { prompt: j, column },
                None => CellKind::HeaderOther { prompt: j },
            });
        }
    }
    layout
}

/// Builds the table for the events `selected` that were marked (in that
/// order) into `marked`. Rows follow trigger order.
pub fn build_table(
    marked: &MarkedText,
    instance: &EaeInstance,
    selected: &[usize],
    registry: &PromptRegistry,
    tokenizer: &dyn Tokenizer,
) -> Result<SlottedTable> {
    if selected.len() != marked.event_ordinals.len() {
        return Err(Error::InvalidArgument(format!(
            "{} events selected but {} were marked",
            selected.len(),
            marked.event_ordinals.len()
        )));
    }
    let mut order: Vec<(usize, usize)> = selected
        .iter()
        .zip(&marked.event_ordinals)
        .map(|(&e, &o)| (o, e))
        .collect();
    order.sort_by_key(|&(o, _)| o);

    let types: Vec<String> = {
        let evs: Vec<usize> = order.iter().map(|&(_, e)| e).collect();
        instance.distinct_types(&evs)
    };
    let header = build_column_header(&types, registry, tokenizer)?;
    let mut layout = header_layout(&header);
    let mut rows = Vec::with_capacity(order.len());
    for (r, &(ordinal, e)) in order.iter().enumerate() {
        let ev = &instance.events[e];
        let template = registry.require(&ev.event_type)?;
        for a in &ev.arguments {
            if !template.has_role(&a.role) {
                return Err(Error::UnknownRole {
                    event_type: ev.event_type.clone(),
                    role: a.role.clone(),
                });
            }
        }
        let source = marked
            .trigger_positions(ordinal)
            .ok_or_else(|| Error::InvalidArgument(format!("event {e} is not marked")))?;
        let start = layout.len();
        layout.extend(std::iter::repeat_n(CellKind::Trigger { row: r }, source.len()));
        let trigger = start..layout.len();
        let p = header.prompt_of(&template.event_type).unwrap();
        let mut slots = Vec::new();
        for column in header.prompts[p].columns.clone() {
            slots.push(SlotCell {
                role: header.columns[column].role.clone(),
                column,
                event_row: r,
                position: layout.len(),
            });
            layout.push(CellKind::Slot { row: r, column });
        }
        rows.push(TableRow {
            event: e,
            ordinal,
            trigger,
            source,
            slots,
        });
    }
    Ok(SlottedTable {
        header,
        rows,
        layout,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    /// Position in the marked text.
    Text(usize),
    /// Token `pos` of header prompt `prompt`.
    Prompt { prompt: usize, pos: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    HeaderEncoding,
    TriggerCopy,
    SlotAverage,
}

/// Per table position, a weighted combination of source rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TablePlan {
    pub weights: Vec<Vec<(Source, f64)>>,
    pub provenance: Vec<Provenance>,
}

impl TablePlan {
    /// Dense `[table length x source rows]` matrix where text rows come
    /// first, then prompt `j` occupies rows `text_len + offsets[j] ..`.
    pub fn dense(&self, text_len: usize, prompt_offsets: &[usize], total: usize) -> Array2<f64> {
        let mut m = Array2::zeros((self.weights.len(), total));
        for (t, ws) in self.weights.iter().enumerate() {
            for &(src, w) in ws {
                let col = match src {
                    Source::Text(p) => p,
                    Source::Prompt { prompt, pos } => text_len + prompt_offsets[prompt] + pos,
                };
                m[[t, col]] += w;
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableEmbedding {
    pub matrix: Array2<f64>,
    pub provenance: Vec<Provenance>,
}

/// Initial table matrix from per-prompt encodings and the marked-text
/// encoding: header rows copy prompt encodings, trigger rows copy the text
/// encoding, slots average role-mention and marker encodings.
pub fn init_table_embeddings(
    table: &SlottedTable,
    marked: &MarkedText,
    prompt_encodings: &[ArrayView2<f64>],
    text_encoding: ArrayView2<f64>,
) -> Result<TableEmbedding> {
    let width = text_encoding.ncols();
    if prompt_encodings.len() != table.header.prompts.len() {
        return Err(Error::Shape(format!(
            "{} prompt encodings for {} prompts",
            prompt_encodings.len(),
            table.header.prompts.len()
        )));
    }
    for (j, e) in prompt_encodings.iter().enumerate() {
        if e.ncols() != width {
            return Err(Error::Shape(format!(
                "prompt {j} encoding width {} differs from text width {width}",
                e.ncols()
            )));
        }
        if e.nrows() != table.header.prompts[j].range.len() {
            return Err(Error::Shape(format!("prompt {j} encoding has {} rows", e.nrows())));
        }
    }
    if text_encoding.nrows() != marked.len() {
        return Err(Error::Shape(format!(
            "text encoding has {} rows for {} tokens",
            text_encoding.nrows(),
            marked.len()
        )));
    }
    let plan = table.embedding_plan(marked)?;
    let mut matrix = Array2::zeros((table.len(), width));
    for (t, ws) in plan.weights.iter().enumerate() {
        let mut row = matrix.row_mut(t);
        for &(src, w) in ws {
            let v = match src {
                Source::Text(p) => text_encoding.row(p),
                Source::Prompt { prompt, pos } => prompt_encodings[prompt].row(pos),
            };
            row.scaled_add(w, &v);
        }
    }
    Ok(TableEmbedding {
        matrix,
        provenance: plan.provenance,
    })
}
