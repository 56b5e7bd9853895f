use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use candle::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tabeae_core::corpus::EaeInstance;
use tabeae_core::eval::score;
use tabeae_core::scheme::{expand_instances, SchemeConfig, TrainConfig};

use crate::error::{ModelError, Result};
use crate::features::{Featurizer, SampleInput};
use crate::loss::sample_loss;
use crate::model::TabEae;
use crate::predict::predict_corpus;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_arg_i: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_arg_c: Option<f64>,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    /// Mean batch loss of every step.
    pub losses: Vec<f64>,
    pub records: Vec<MetricRecord>,
    pub best_dev_arg_c: Option<f64>,
    pub best_step: Option<usize>,
}

type BestHook<'a> = Box<dyn FnMut(&TabEae, usize, f64) -> Result<()> + 'a>;

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Scored every `eval_every` steps and at the end; the best Arg-C weights
    /// are restored when training finishes.
    pub dev: Option<&'a [EaeInstance]>,
    /// Metrics JSONL, one record per logged step.
    pub metrics_path: Option<PathBuf>,
    /// Steps between plain loss records; 0 logs only evaluation steps.
    pub log_every: usize,
    /// Called with each new best dev Arg-C.
    pub on_best: Option<BestHook<'a>>,
    pub verbose: bool,
}

/// Global L2 norm of the gradients of `vars`, rescaled in place to at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut candle::backprop::GradStore, vars: &[candle::Var], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += g.sqr()?.sum_all()?.to_dtype(candle::DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / (norm + 1e-6);
        for v in vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                let g = (g * scale)?;
                grads.insert(v.as_tensor(), g);
            }
        }
    }
    Ok(norm)
}

pub fn build_inputs(feat: &Featurizer, corpus: &[EaeInstance], scheme: SchemeConfig) -> Result<Vec<SampleInput>> {
    feat.build_all(corpus, &expand_instances(corpus, scheme.train_mode, feat.window))
}

pub fn train(
    model: &TabEae,
    feat: &Featurizer,
    corpus: &[EaeInstance],
    scheme: SchemeConfig,
    cfg: &TrainConfig,
    mut opts: TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(ModelError::Config("training corpus is empty".into()));
    }
    let inputs = build_inputs(feat, corpus, scheme)?;
    let pet = feat.ablation.pet;
    let (cross, rest) = model.param_groups();
    let all: Vec<candle::Var> = cross.iter().chain(&rest).cloned().collect();
    let params = |lr: f64| ParamsAdamW {
        lr,
        weight_decay: cfg.weight_decay,
        ..ParamsAdamW::default()
    };
    let mut opt_rest = AdamW::new(rest, params(cfg.learning_rate))?;
    let mut opt_cross = AdamW::new(cross, params(cfg.learning_rate * cfg.cross_attention_lr_scale))?;

    let mut metrics = match &opts.metrics_path {
        Some(p) => Some(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| ModelError::io(p, e))?,
        )),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut out = TrainOutcome::default();
    let mut best: Option<Vec<(String, Tensor)>> = None;
    let t0 = Instant::now();

    for step in 0..cfg.steps {
        let lr = cfg.learning_rate * cfg.lr_factor(step);
        opt_rest.set_learning_rate(lr);
        opt_cross.set_learning_rate(lr * cfg.cross_attention_lr_scale);

        let mut losses = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size.min(inputs.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let input = &inputs[order[cursor]];
            cursor += 1;
            let o = model.forward(input, pet, true)?;
            if let Some(l) = sample_loss(&o.logits_start, &o.logits_end, input, cfg.assignment_cost)? {
                losses.push(l);
            }
        }
        let (loss_value, grad_norm) = if losses.is_empty() {
            (0.0, 0.0)
        } else {
            let n = losses.len() as f64;
            let loss = (Tensor::stack(&losses, 0)?.sum_all()? / n)?;
            let value = loss.to_dtype(candle::DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(ModelError::Diverged { step, loss: value });
            }
            let mut grads = loss.backward()?;
            let norm = clip_grad_norm(&mut grads, &all, cfg.max_grad_norm)?;
            opt_rest.step(&grads)?;
            opt_cross.step(&grads)?;
            (value, norm)
        };
        out.losses.push(loss_value);

        let last = step + 1 == cfg.steps;
        let eval_now = opts.dev.is_some() && ((cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) || last);
        let log_now = eval_now || (opts.log_every > 0 && (step + 1) % opts.log_every == 0) || last;
        if !log_now {
            continue;
        }
        let mut rec = MetricRecord {
            step: step + 1,
            loss: loss_value,
            lr,
            grad_norm,
            dev_arg_i: None,
            dev_arg_c: None,
            elapsed_s: t0.elapsed().as_secs_f64(),
        };
        if let (true, Some(dev)) = (eval_now, opts.dev) {
            let preds = predict_corpus(model, feat, dev, scheme.infer_mode)?;
            let report = score(dev, &preds)?;
            rec.dev_arg_i = Some(report.arg_i.f1);
            rec.dev_arg_c = Some(report.arg_c.f1);
            if out.best_dev_arg_c.is_none_or(|b| report.arg_c.f1 > b) {
                out.best_dev_arg_c = Some(report.arg_c.f1);
                out.best_step = Some(step + 1);
                best = Some(model.snapshot()?);
                if let Some(hook) = opts.on_best.as_mut() {
                    hook(model, step + 1, report.arg_c.f1)?;
                }
            }
        }
        if opts.verbose {
            eprintln!(
                "step {:>6}  loss {:.4}  lr {:.2e}{}",
                rec.step,
                rec.loss,
                rec.lr,
                rec.dev_arg_c.map(|f| format!("  dev Arg-C {:.2}", 100.0 * f)).unwrap_or_default()
            );
        }
        if let Some(w) = metrics.as_mut() {
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n").map_err(|e| ModelError::io("metrics", e))?;
        }
        out.records.push(rec);
    }
    if let Some(w) = metrics.as_mut() {
        w.flush().map_err(|e| ModelError::io("metrics", e))?;
    }
    if let Some(snap) = best {
        model.restore(&snap)?;
    }
    Ok(out)
}
