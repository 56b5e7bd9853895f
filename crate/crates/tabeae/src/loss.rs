use candle::{DType, Tensor};
use candle_nn::ops::log_softmax;
use tabeae_core::corpus::Span;
use tabeae_core::span::{assign_event, AssignmentCost};

use crate::error::{ModelError, Result};
use crate::features::SampleInput;

/// Per-slot targets (table order) from row-wise, role-wise Hungarian
/// matching against the current logits.
pub fn assignment_targets(
    logits_start: &Tensor,
    logits_end: &Tensor,
    input: &SampleInput,
    cost: AssignmentCost,
) -> Result<Vec<Span>> {
    let ls = logits_start.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let le = logits_end.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let mut targets = Vec::with_capacity(ls.len());
    let mut k = 0;
    for (row, gold) in input.table.rows.iter().zip(&input.gold) {
        let n = row.slots.len();
        let roles: Vec<&str> = row.slots.iter().map(|s| s.role.as_str()).collect();
        let gold: Vec<(&str, Span)> = gold.iter().map(|(r, s)| (r.as_str(), *s)).collect();
        targets.extend(assign_event(&roles, &gold, &ls[k..k + n], &le[k..k + n], cost)?);
        k += n;
    }
    Ok(targets)
}

/// `-Σ_k (log softmax(start_k)[l_k] + log softmax(end_k)[m_k])`.
pub fn bipartite_loss(logits_start: &Tensor, logits_end: &Tensor, targets: &[Span]) -> Result<Tensor> {
    let (s, l) = logits_start.dims2()?;
    if s != targets.len() || logits_end.dims2()? != (s, l) {
        return Err(ModelError::Config(format!("{} targets for {s} slot logit rows", targets.len())));
    }
    if let Some(t) = targets.iter().find(|t| t.start >= l || t.end >= l) {
        return Err(tabeae_core::Error::InvalidArgument(format!(
            "target [{}, {}) outside {l} positions",
            t.start, t.end
        ))
        .into());
    }
    let dev = logits_start.device();
    let starts: Vec<u32> = targets.iter().map(|t| t.start as u32).collect();
    let ends: Vec<u32> = targets.iter().map(|t| t.end as u32).collect();
    let pick = |logits: &Tensor, idx: Vec<u32>| -> Result<Tensor> {
        let idx = Tensor::from_vec(idx, (s, 1), dev)?;
        Ok(log_softmax(logits, 1)?.gather(&idx, 1)?.sum_all()?)
    };
    let total = (pick(logits_start, starts)? + pick(logits_end, ends)?)?;
    Ok(total.neg()?)
}

/// Loss of one sample, `None` when the table has no slots.
pub fn sample_loss(
    logits_start: &Tensor,
    logits_end: &Tensor,
    input: &SampleInput,
    cost: AssignmentCost,
) -> Result<Option<Tensor>> {
    if logits_start.dim(0)? == 0 {
        return Ok(None);
    }
    let targets = assignment_targets(logits_start, logits_end, input, cost)?;
    bipartite_loss(logits_start, logits_end, &targets).map(Some)
}
