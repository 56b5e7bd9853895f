use candle::DType;
use tabeae_core::corpus::EaeInstance;
use tabeae_core::eval::Prediction;
use tabeae_core::scheme::{expand_instance, Mode};
use tabeae_core::span::{select_span, SpanPrediction};

use crate::error::Result;
use crate::features::{Featurizer, SampleInput};
use crate::model::TabEae;

#[derive(Clone, Debug, PartialEq)]
pub struct SlotDecode {
    /// Event index in the instance.
    pub event: usize,
    pub role: String,
    /// Subword span; `(0, 0)` when the slot stays empty.
    pub span: SpanPrediction,
}

/// Best span for every slot of the sample, in table order.
pub fn decode_sample(model: &TabEae, input: &SampleInput, pet: bool) -> Result<Vec<SlotDecode>> {
    let out = model.forward(input, pet, false)?;
    if out.logits_start.dim(0)? == 0 {
        return Ok(Vec::new());
    }
    let ls = out.logits_start.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let le = out.logits_end.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let mut decoded = Vec::with_capacity(ls.len());
    let slots = input.table.rows.iter().flat_map(|r| r.slots.iter().map(move |s| (r.event, s)));
    for ((event, slot), (s, e)) in slots.zip(ls.iter().zip(&le)) {
        decoded.push(SlotDecode {
            event,
            role: slot.role.clone(),
            span: select_span(s, e, &input.candidates),
        });
    }
    Ok(decoded)
}

/// Word-level predictions of one sample; empty slots are dropped and a
/// `(role, span)` repeated within an event is kept once.
pub fn sample_predictions(
    model: &TabEae,
    input: &SampleInput,
    doc_id: &str,
    pet: bool,
) -> Result<Vec<Prediction>> {
    let mut out: Vec<Prediction> = Vec::new();
    for d in decode_sample(model, input, pet)? {
        if d.span.is_empty() {
            continue;
        }
        let Some(span) = input.marked.word_span(d.span.span()) else {
            continue;
        };
        if let Some(prev) = out
            .iter_mut()
            .find(|p| p.event == d.event && p.role == d.role && p.span == span)
        {
            prev.score = prev.score.max(d.span.score);
            continue;
        }
        out.push(Prediction {
            doc_id: doc_id.to_string(),
            event: d.event,
            role: d.role,
            span,
            score: d.span.score,
        });
    }
    Ok(out)
}

/// Model inputs of an instance under an inference mode.
pub fn instance_inputs(feat: &Featurizer, x: &EaeInstance, index: usize, mode: Mode) -> Result<Vec<SampleInput>> {
    expand_instance(x, index, mode, feat.window)
        .iter()
        .map(|s| feat.build(x, s))
        .collect()
}

pub fn predict_instance(
    model: &TabEae,
    feat: &Featurizer,
    x: &EaeInstance,
    index: usize,
    mode: Mode,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for input in instance_inputs(feat, x, index, mode)? {
        out.extend(sample_predictions(model, &input, &x.doc_id, feat.ablation.pet)?);
    }
    Ok(out)
}

pub fn predict_corpus(model: &TabEae, feat: &Featurizer, corpus: &[EaeInstance], mode: Mode) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, x) in corpus.iter().enumerate() {
        out.extend(predict_instance(model, feat, x, i, mode)?);
    }
    Ok(out)
}
