//! Checkpoints are safetensors files. The header metadata holds the model
//! configuration under `tabeae.model` and caller-defined JSON (vocabulary,
//! run manifest) under `tabeae.extra`; tensors are stored by parameter name.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle::{DType, Tensor};
use safetensors::SafeTensors;

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::model::TabEae;

const MODEL_KEY: &str = "tabeae.model";
const EXTRA_KEY: &str = "tabeae.extra";

pub fn save(path: impl AsRef<Path>, model: &TabEae, extra: &serde_json::Value) -> Result<()> {
    let path = path.as_ref();
    let data = model.varmap().data().lock().unwrap();
    let tensors: Vec<(String, Tensor)> = model
        .manifest()
        .iter()
        .map(|(n, _)| (n.clone(), data[n].as_tensor().clone()))
        .collect();
    let meta = HashMap::from([
        (MODEL_KEY.to_string(), serde_json::to_string(&model.config)?),
        (EXTRA_KEY.to_string(), serde_json::to_string(extra)?),
    ]);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
    }
    safetensors::serialize_to_file(tensors, Some(meta), path)?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| ModelError::io(path, e))
}

fn metadata(buf: &[u8]) -> Result<(ModelConfig, serde_json::Value)> {
    let (_, meta) = SafeTensors::read_metadata(buf)?;
    let kv = meta.metadata().clone().unwrap_or_default();
    let cfg = kv
        .get(MODEL_KEY)
        .ok_or_else(|| ModelError::ShapeMismatch(format!("no `{MODEL_KEY}` entry in checkpoint metadata")))?;
    let extra = match kv.get(EXTRA_KEY) {
        Some(s) => serde_json::from_str(s)?,
        None => serde_json::Value::Null,
    };
    Ok((serde_json::from_str(cfg)?, extra))
}

pub fn read_meta(path: impl AsRef<Path>) -> Result<(ModelConfig, serde_json::Value)> {
    metadata(&read(path.as_ref())?)
}

/// Human-readable differences between the expected parameter shapes and
/// the ones found; empty when they agree.
pub fn shape_diff(expected: &[(String, Vec<usize>)], found: &BTreeMap<String, Vec<usize>>) -> Vec<String> {
    let mut diff = Vec::new();
    for (name, shape) in expected {
        match found.get(name) {
            None => diff.push(format!("- {name} {shape:?} missing from checkpoint")),
            Some(s) if s != shape => diff.push(format!("~ {name} expected {shape:?}, found {s:?}")),
            _ => {}
        }
    }
    for (name, shape) in found {
        if !expected.iter().any(|(n, _)| n == name) {
            diff.push(format!("+ {name} {shape:?} not used by the model"));
        }
    }
    diff
}

/// Loads weights into an existing model after checking every name and shape.
pub fn load_into(path: impl AsRef<Path>, model: &TabEae) -> Result<serde_json::Value> {
    let buf = read(path.as_ref())?;
    let (cfg, extra) = metadata(&buf)?;
    let tensors = candle::safetensors::load_buffer(&buf, model.device())?;
    let found: BTreeMap<String, Vec<usize>> = tensors.iter().map(|(n, t)| (n.clone(), t.dims().to_vec())).collect();
    let mut diff = shape_diff(model.manifest(), &found);
    if cfg != model.config {
        diff.insert(0, format!("configuration differs: checkpoint {cfg:?}"));
    }
    if !diff.is_empty() {
        return Err(ModelError::ShapeMismatch(diff.join("\n")));
    }
    let snapshot: Vec<(String, Tensor)> = tensors
        .into_iter()
        .map(|(n, t)| Ok((n, t.to_dtype(model.dtype())?)))
        .collect::<Result<_>>()?;
    model.restore(&snapshot)?;
    Ok(extra)
}

/// Builds the model described by the checkpoint and loads its weights.
pub fn load(path: impl AsRef<Path>, dtype: DType) -> Result<(TabEae, serde_json::Value)> {
    let (cfg, _) = read_meta(path.as_ref())?;
    let model = TabEae::new(cfg, 0, dtype)?;
    let extra = load_into(path, &model)?;
    Ok((model, extra))
}
