//! Initialization from a pretrained RoBERTa checkpoint (safetensors, Hugging
//! Face parameter names). The bottom layers become the encoder, the next
//! ones supply the decoder self-attention and feed-forward blocks;
//! cross-attention keeps its random initialization.

use std::collections::HashMap;
use std::path::Path;

use candle::Tensor;

use crate::error::{ModelError, Result};
use crate::model::TabEae;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImportReport {
    pub loaded: Vec<String>,
    /// Parameters left at their initial values.
    pub kept: Vec<String>,
    /// Extra vocabulary rows (added marker tokens) not covered by the source.
    pub new_vocab_rows: usize,
}

fn layer_pairs(ours: &str, theirs: &str, with_cross_norm: bool) -> Vec<(String, String)> {
    let mut v = Vec::new();
    for (a, b) in [("q", "query"), ("k", "key"), ("v", "value")] {
        for p in ["weight", "bias"] {
            v.push((format!("{ours}.attn.{a}.{p}"), format!("{theirs}.attention.self.{b}.{p}")));
        }
    }
    let out_norm = if with_cross_norm { "norm3" } else { "norm2" };
    for p in ["weight", "bias"] {
        v.push((format!("{ours}.attn.o.{p}"), format!("{theirs}.attention.output.dense.{p}")));
        v.push((format!("{ours}.norm1.{p}"), format!("{theirs}.attention.output.LayerNorm.{p}")));
        v.push((format!("{ours}.ffn.up.{p}"), format!("{theirs}.intermediate.dense.{p}")));
        v.push((format!("{ours}.ffn.down.{p}"), format!("{theirs}.output.dense.{p}")));
        v.push((format!("{ours}.{out_norm}.{p}"), format!("{theirs}.output.LayerNorm.{p}")));
    }
    v
}

/// `(our name, source name)` for every imported parameter.
pub fn roberta_name_map(encoder_layers: usize, decoder_layers: usize) -> Vec<(String, String)> {
    let mut v = vec![
        ("embeddings.word".to_string(), "embeddings.word_embeddings.weight".to_string()),
        ("embeddings.position".to_string(), "embeddings.position_embeddings.weight".to_string()),
        ("embeddings.norm.weight".to_string(), "embeddings.LayerNorm.weight".to_string()),
        ("embeddings.norm.bias".to_string(), "embeddings.LayerNorm.bias".to_string()),
    ];
    for i in 0..encoder_layers {
        v.extend(layer_pairs(&format!("encoder.{i}"), &format!("encoder.layer.{i}"), false));
    }
    for j in 0..decoder_layers {
        v.extend(layer_pairs(
            &format!("decoder.{j}"),
            &format!("encoder.layer.{}", encoder_layers + j),
            true,
        ));
    }
    v
}

fn lookup<'a>(src: &'a HashMap<String, Tensor>, name: &str) -> Option<&'a Tensor> {
    let legacy = name.replace("LayerNorm.weight", "LayerNorm.gamma").replace("LayerNorm.bias", "LayerNorm.beta");
    [name.to_string(), format!("roberta.{name}"), legacy.clone(), format!("roberta.{legacy}")]
        .iter()
        .find_map(|n| src.get(n))
}

pub fn import_roberta(model: &TabEae, path: impl AsRef<Path>) -> Result<ImportReport> {
    let src = candle::safetensors::load(path.as_ref(), model.device())?;
    let cfg = &model.config;
    let mut report = ImportReport::default();
    let mut snapshot = Vec::new();
    for (ours, theirs) in roberta_name_map(cfg.encoder_layers, cfg.decoder_layers) {
        let var = model
            .var(&ours)
            .ok_or_else(|| ModelError::ShapeMismatch(format!("model has no parameter {ours}")))?;
        let t = lookup(&src, &theirs)
            .ok_or_else(|| ModelError::ShapeMismatch(format!("source checkpoint lacks {theirs}")))?
            .to_dtype(model.dtype())?;
        let want = var.dims().to_vec();
        let mut t = if ours == "embeddings.word" && t.dim(0)? < want[0] && t.dims()[1..] == want[1..] {
            let extra = want[0] - t.dim(0)?;
            report.new_vocab_rows = extra;
            let init = var.as_tensor().narrow(0, t.dim(0)?, extra)?;
            Tensor::cat(&[&t, &init], 0)?
        } else {
            t
        };
        if ours == "embeddings.word" {
            if let Some(tt) = lookup(&src, "embeddings.token_type_embeddings.weight") {
                t = t.broadcast_add(&tt.to_dtype(model.dtype())?.narrow(0, 0, 1)?)?;
            }
        }
        if t.dims() != want.as_slice() {
            return Err(ModelError::ShapeMismatch(format!(
                "~ {ours} expected {want:?}, source {theirs} has {:?}",
                t.dims()
            )));
        }
        snapshot.push((ours.clone(), t));
        report.loaded.push(ours);
    }
    model.restore(&snapshot)?;
    report.kept = model
        .manifest()
        .iter()
        .map(|(n, _)| n.clone())
        .filter(|n| !report.loaded.contains(n))
        .collect();
    Ok(report)
}
