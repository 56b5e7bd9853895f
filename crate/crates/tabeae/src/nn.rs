//! Transformer building blocks (post-norm, RoBERTa layout), unbatched:
//! every activation is `[positions, hidden]`.

use std::sync::Mutex;

use candle::{Module, Tensor, D};
use candle_nn::ops::softmax_last_dim;
use candle_nn::Linear;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::ParamStore;

/// Layer normalization over the last dimension, built from differentiable
/// primitives.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(weight: Tensor, bias: Tensor, eps: f64) -> Self {
        LayerNorm { weight, bias, eps }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let d = x.dim(D::Minus1)? as f64;
        let mean = (x.sum_keepdim(D::Minus1)? / d)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = (xc.sqr()?.sum_keepdim(D::Minus1)? / d)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xn.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Inverted dropout driven by a seeded generator.
pub struct Dropout {
    p: f64,
    rng: Mutex<ChaCha8Rng>,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        Dropout {
            p,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d0d0)),
        }
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        if !train || self.p == 0.0 {
            return Ok(x.clone());
        }
        let n = x.elem_count();
        let keep = 1.0 - self.p;
        let mask: Vec<f64> = {
            let mut rng = self.rng.lock().unwrap();
            (0..n)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect()
        };
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok(x.mul(&mask)?)
    }
}

pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    heads: usize,
    head_dim: usize,
}

impl Attention {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, std: f64) -> Result<Self> {
        Ok(Attention {
            q: ps.linear(&format!("{name}.q"), d, d, std)?,
            k: ps.linear(&format!("{name}.k"), d, d, std)?,
            v: ps.linear(&format!("{name}.v"), d, d, std)?,
            o: ps.linear(&format!("{name}.o"), d, d, std)?,
            heads,
            head_dim: d / heads,
        })
    }

    /// `bias` is added to the `[queries, keys]` scores of every head.
    pub fn forward(&self, xq: &Tensor, xkv: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (tq, d) = xq.dims2()?;
        let tk = xkv.dim(0)?;
        let split = |t: Tensor, n: usize| -> Result<Tensor> {
            Ok(t.reshape((n, self.heads, self.head_dim))?.transpose(0, 1)?.contiguous()?)
        };
        let q = split(self.q.forward(xq)?, tq)?;
        let k = split(self.k.forward(xkv)?, tk)?;
        let v = split(self.v.forward(xkv)?, tk)?;
        let scores = (q.matmul(&k.t()?)? * (1.0 / (self.head_dim as f64).sqrt()))?;
        let scores = match bias {
            Some(b) => scores.broadcast_add(b)?,
            None => scores,
        };
        let p = softmax_last_dim(&scores)?;
        let ctx = p.matmul(&v)?.transpose(0, 1)?.contiguous()?.reshape((tq, d))?;
        Ok(self.o.forward(&ctx)?)
    }
}

pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, ffn: usize, std: f64) -> Result<Self> {
        Ok(FeedForward {
            up: ps.linear(&format!("{name}.up"), d, ffn, std)?,
            down: ps.linear(&format!("{name}.down"), ffn, d, std)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.down.forward(&self.up.forward(x)?.gelu_erf()?)?)
    }
}

pub struct EncoderLayer {
    pub attn: Attention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, ffn: usize, eps: f64, std: f64) -> Result<Self> {
        Ok(EncoderLayer {
            attn: Attention::new(ps, &format!("{name}.attn"), d, heads, std)?,
            norm1: ps.layer_norm(&format!("{name}.norm1"), d, eps)?,
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), d, ffn, std)?,
            norm2: ps.layer_norm(&format!("{name}.norm2"), d, eps)?,
        })
    }

    pub fn forward(&self, x: &Tensor, drop: &Dropout, train: bool) -> Result<Tensor> {
        let a = drop.forward(&self.attn.forward(x, x, None)?, train)?;
        let h = self.norm1.forward(&(x + a)?)?;
        let f = drop.forward(&self.ffn.forward(&h)?, train)?;
        self.norm2.forward(&(h + f)?)
    }
}

pub struct DecoderLayer {
    pub attn: Attention,
    pub norm1: LayerNorm,
    pub cross: Attention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, ffn: usize, eps: f64, std: f64) -> Result<Self> {
        Ok(DecoderLayer {
            attn: Attention::new(ps, &format!("{name}.attn"), d, heads, std)?,
            norm1: ps.layer_norm(&format!("{name}.norm1"), d, eps)?,
            cross: Attention::new(ps, &format!("{name}.cross"), d, heads, std)?,
            norm2: ps.layer_norm(&format!("{name}.norm2"), d, eps)?,
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), d, ffn, std)?,
            norm3: ps.layer_norm(&format!("{name}.norm3"), d, eps)?,
        })
    }

    /// Self-attention restricted by `self_bias`, then cross-attention to
    /// `memory` unless it is `None` (the sub-block is skipped entirely).
    pub fn forward(
        &self,
        x: &Tensor,
        self_bias: Option<&Tensor>,
        memory: Option<&Tensor>,
        drop: &Dropout,
        train: bool,
    ) -> Result<Tensor> {
        let a = drop.forward(&self.attn.forward(x, x, self_bias)?, train)?;
        let mut h = self.norm1.forward(&(x + a)?)?;
        if let Some(m) = memory {
            let c = drop.forward(&self.cross.forward(&h, m, None)?, train)?;
            h = self.norm2.forward(&(h + c)?)?;
        }
        let f = drop.forward(&self.ffn.forward(&h)?, train)?;
        self.norm3.forward(&(h + f)?)
    }
}
