//! Shared encoder for text and prompts, shared decoder for the context
//! representation and the slotted table, and the span selector weights.

use candle::{DType, Device, Tensor, Var};
use candle_nn::VarMap;
use tabeae_core::mask::StructureMask;
use tabeae_core::tokenize::TokenId;

use crate::config::{ModelConfig, TablePositions};
use crate::error::{ModelError, Result};
use crate::features::SampleInput;
use crate::nn::{DecoderLayer, Dropout, EncoderLayer, LayerNorm};
use crate::params::{Init, ParamStore};

/// Score added to disallowed attention pairs.
pub const MASKED: f64 = -1e9;

pub struct TabEae {
    pub config: ModelConfig,
    varmap: VarMap,
    manifest: Vec<(String, Vec<usize>)>,
    device: Device,
    dtype: DType,
    word_emb: Tensor,
    pos_emb: Tensor,
    emb_norm: LayerNorm,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    w_start: Tensor,
    w_end: Tensor,
    dropout: Dropout,
}

pub struct SampleOutput {
    /// `[slots, text length]`
    pub logits_start: Tensor,
    pub logits_end: Tensor,
    pub h_text: Tensor,
    pub h_table: Tensor,
    pub h_slots: Tensor,
}

impl TabEae {
    pub fn new(config: ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let mut ps = ParamStore::new(seed, dtype, &device);
        let (d, std, eps) = (config.hidden, config.init_std, config.layer_norm_eps);
        let word_emb = ps.get("embeddings.word", &[config.vocab_size, d], Init::Normal(std))?;
        let pos_emb = ps.get("embeddings.position", &[config.max_positions, d], Init::Normal(std))?;
        let emb_norm = ps.layer_norm("embeddings.norm", d, eps)?;
        let encoder = (0..config.encoder_layers)
            .map(|i| EncoderLayer::new(&mut ps, &format!("encoder.{i}"), d, config.heads, config.ffn, eps, std))
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..config.decoder_layers)
            .map(|i| DecoderLayer::new(&mut ps, &format!("decoder.{i}"), d, config.heads, config.ffn, eps, std))
            .collect::<Result<Vec<_>>>()?;
        let w_start = ps.get("span.w_start", &[d], Init::Ones)?;
        let w_end = ps.get("span.w_end", &[d], Init::Ones)?;
        let (varmap, manifest) = ps.finish();
        Ok(TabEae {
            dropout: Dropout::new(config.dropout, seed),
            config,
            varmap,
            manifest,
            device,
            dtype,
            word_emb,
            pos_emb,
            emb_norm,
            encoder,
            decoder,
            w_start,
            w_end,
        })
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    /// Parameter names and shapes in creation order.
    pub fn manifest(&self) -> &[(String, Vec<usize>)] {
        &self.manifest
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.varmap.data().lock().unwrap().get(name).cloned()
    }

    /// `(cross-attention parameters, everything else)`, each in manifest order.
    pub fn param_groups(&self) -> (Vec<Var>, Vec<Var>) {
        let data = self.varmap.data().lock().unwrap();
        let mut cross = Vec::new();
        let mut rest = Vec::new();
        for (name, _) in &self.manifest {
            let v = data[name].clone();
            if name.contains(".cross.") {
                cross.push(v);
            } else {
                rest.push(v);
            }
        }
        (cross, rest)
    }

    pub fn w_start(&self) -> &Tensor {
        &self.w_start
    }

    pub fn w_end(&self) -> &Tensor {
        &self.w_end
    }

    /// Copies of every parameter, for restoring later.
    pub fn snapshot(&self) -> Result<Vec<(String, Tensor)>> {
        let data = self.varmap.data().lock().unwrap();
        self.manifest
            .iter()
            .map(|(n, _)| Ok((n.clone(), data[n].as_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&self, snapshot: &[(String, Tensor)]) -> Result<()> {
        let data = self.varmap.data().lock().unwrap();
        for (n, t) in snapshot {
            let var = data
                .get(n)
                .ok_or_else(|| ModelError::ShapeMismatch(format!("unknown parameter {n}")))?;
            var.set(t)?;
        }
        Ok(())
    }

    fn ids_tensor(&self, ids: &[TokenId]) -> Result<Tensor> {
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(ModelError::Config(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(Tensor::new(ids, &self.device)?)
    }

    fn positions(&self, n: usize, what: &'static str) -> Result<Tensor> {
        if n > self.config.max_len() {
            return Err(ModelError::Overlength {
                what,
                len: n,
                max: self.config.max_len(),
            });
        }
        Ok(self.pos_emb.narrow(0, self.config.position_offset, n)?)
    }

    /// Raw word embeddings.
    pub fn token_embeddings(&self, ids: &[TokenId]) -> Result<Tensor> {
        Ok(self.word_emb.index_select(&self.ids_tensor(ids)?, 0)?)
    }

    fn embed(&self, ids: &[TokenId], train: bool) -> Result<Tensor> {
        let x = (self.token_embeddings(ids)? + self.positions(ids.len(), "encoder input")?)?;
        self.dropout.forward(&self.emb_norm.forward(&x)?, train)
    }

    /// Encoder output `[ids, hidden]`.
    pub fn encode(&self, ids: &[TokenId], train: bool) -> Result<Tensor> {
        let mut h = self.embed(ids, train)?;
        for layer in &self.encoder {
            h = layer.forward(&h, &self.dropout, train)?;
        }
        Ok(h)
    }

    /// Decoder pass with full self-attention and no cross-attention.
    pub fn contextualize(&self, e: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = e.clone();
        for layer in &self.decoder {
            h = layer.forward(&h, None, None, &self.dropout, train)?;
        }
        Ok(h)
    }

    /// `[n, n]` additive attention bias: 0 where allowed, `MASKED` elsewhere.
    pub fn mask_bias(&self, mask: &StructureMask) -> Result<Tensor> {
        let n = mask.len();
        let v: Vec<f64> = mask.as_slice().iter().map(|&a| if a { 0.0 } else { MASKED }).collect();
        Ok(Tensor::from_vec(v, (n, n), &self.device)?.to_dtype(self.dtype)?)
    }

    /// Masked self-attention over the table plus cross-attention to `e_text`.
    pub fn decode_table(&self, e_tab: &Tensor, mask: &StructureMask, e_text: &Tensor, train: bool) -> Result<Tensor> {
        let n = e_tab.dim(0)?;
        if mask.len() != n {
            return Err(tabeae_core::Error::Shape(format!("mask of size {} for a table of {n} positions", mask.len())).into());
        }
        let bias = self.mask_bias(mask)?;
        let mut h = match self.config.table_positions {
            TablePositions::Restart => (e_tab + self.positions(n, "slotted table")?)?,
            TablePositions::Off => e_tab.clone(),
        };
        for layer in &self.decoder {
            h = layer.forward(&h, Some(&bias), Some(e_text), &self.dropout, train)?;
        }
        Ok(h)
    }

    /// Initial table matrix: the sample's plan applied to the text and
    /// prompt encodings, or to raw token embeddings when `pet` is false.
    pub fn table_embeddings(&self, input: &SampleInput, e_text: &Tensor, pet: bool, train: bool) -> Result<Tensor> {
        let mut sources = vec![if pet {
            e_text.clone()
        } else {
            self.token_embeddings(&input.marked.ids)?
        }];
        for p in &input.prompt_ids {
            sources.push(if pet {
                self.encode(p, train)?
            } else {
                self.token_embeddings(p)?
            });
        }
        let src = Tensor::cat(&sources, 0)?;
        let (w, rows, cols) = input.plan_matrix();
        let w = Tensor::from_vec(w, (rows, cols), &self.device)?.to_dtype(self.dtype)?;
        Ok(w.matmul(&src)?)
    }

    /// `[slots, text]` start and end logits of `h_slots ⊙ w` against `h_text`.
    pub fn span_logits(&self, h_slots: &Tensor, h_text: &Tensor) -> Result<(Tensor, Tensor)> {
        let ht = h_text.t()?;
        let ls = h_slots.broadcast_mul(&self.w_start)?.matmul(&ht)?;
        let le = h_slots.broadcast_mul(&self.w_end)?.matmul(&ht)?;
        Ok((ls, le))
    }

    pub fn forward(&self, input: &SampleInput, pet: bool, train: bool) -> Result<SampleOutput> {
        let e_text = self.encode(&input.marked.ids, train)?;
        let e_tab = self.table_embeddings(input, &e_text, pet, train)?;
        let h_table = self.decode_table(&e_tab, &input.mask, &e_text, train)?;
        let h_text = self.contextualize(&e_text, train)?;
        let slots: Vec<u32> = input.slot_positions().iter().map(|&p| p as u32).collect();
        let h_slots = if slots.is_empty() {
            Tensor::zeros((0, self.config.hidden), self.dtype, &self.device)?
        } else {
            h_table.index_select(&Tensor::new(slots.as_slice(), &self.device)?, 0)?
        };
        let (logits_start, logits_end) = if slots.is_empty() {
            let z = Tensor::zeros((0, input.marked.len()), self.dtype, &self.device)?;
            (z.clone(), z)
        } else {
            self.span_logits(&h_slots, &h_text)?
        };
        Ok(SampleOutput {
            logits_start,
            logits_end,
            h_text,
            h_table,
            h_slots,
        })
    }
}
