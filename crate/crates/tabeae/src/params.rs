//! Named parameters with seeded initialization.

use candle::{DType, Device, Tensor, Var};
use candle_nn::{Linear, VarMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::nn::LayerNorm;

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

pub struct ParamStore {
    varmap: VarMap,
    manifest: Vec<(String, Vec<usize>)>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        ParamStore {
            varmap: VarMap::new(),
            manifest: Vec::new(),
            dtype,
            device: device.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| d.sample(&mut self.rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.varmap.data().lock().unwrap().insert(name.to_string(), var);
        self.manifest.push((name.to_string(), shape.to_vec()));
        Ok(out)
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize, std: f64) -> Result<Linear> {
        let w = self.get(&format!("{name}.weight"), &[d_out, d_in], Init::Normal(std))?;
        let b = self.get(&format!("{name}.bias"), &[d_out], Init::Zeros)?;
        Ok(Linear::new(w, Some(b)))
    }

    pub fn layer_norm(&mut self, name: &str, d: usize, eps: f64) -> Result<LayerNorm> {
        let w = self.get(&format!("{name}.weight"), &[d], Init::Ones)?;
        let b = self.get(&format!("{name}.bias"), &[d], Init::Zeros)?;
        Ok(LayerNorm::new(w, b, eps))
    }

    pub fn finish(self) -> (VarMap, Vec<(String, Vec<usize>)>) {
        (self.varmap, self.manifest)
    }
}
