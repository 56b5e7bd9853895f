use std::fs;
use std::path::Path;
use std::time::Instant;

use candle::DType;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tabeae::{checkpoint, import, predict_corpus, train, Featurizer, TabEae, TrainOptions};
use tabeae_core::corpus::{default_vocab, load_corpus, synth_corpus, write_native, EaeInstance, SynthConfig};
use tabeae_core::eval::{
    analyze, distance_svg, event_count_histogram_svg, read_predictions, score, write_predictions, Analysis,
    EvalReport, Prediction, DISTANCE_EDGES,
};
use tabeae_core::prompts::PromptRegistry;
use tabeae_core::scheme::{Mode, TrainConfig};
use tabeae_core::tokenize::{Tokenizer, WordVocab};

use crate::args::{AblateArgs, AnalyzeArgs, EvalArgs, PredictArgs, SynthArgs, TrainArgs};
use crate::error::{runtime, usage, CliError, CliResult};
use crate::run::{
    max_markers, parse_format, registry_from, AnyTokenizer, Layout, RegistryInfo, Resolved, RunManifest, SeedLayout,
    TokenizerInfo, CHECKPOINT, MANIFEST, METRICS, REGISTRY, SUMMARY, VOCAB,
};

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    write(path, text)
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{what} {} does not exist", path.display())))
    }
}

pub fn synth(args: SynthArgs) -> CliResult<()> {
    let (registry, _) = registry_from(&args.registry)?;
    let cfg = SynthConfig {
        seed: args.seed,
        n_instances: args.n,
        max_events: args.max_events,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&cfg, &default_vocab(args.vocab), &registry).map_err(usage)?;
    let mut buf = Vec::new();
    write_native(&mut buf, &corpus).map_err(runtime)?;
    write(&args.out, buf)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub checkpoint: String,
    pub best_dev_arg_c: Option<f64>,
    pub best_step: Option<usize>,
    pub final_loss: Option<f64>,
    pub arg_i: tabeae_core::eval::Prf,
    pub arg_c: tabeae_core::eval::Prf,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; zero for a single value.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    /// Split the selected checkpoints were scored on.
    pub split: String,
    pub runs: Vec<SeedResult>,
    pub arg_i_f1: MeanStd,
    pub arg_c_f1: MeanStd,
}

fn log(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn load_split(r: &Resolved, path: &Path, what: &str) -> CliResult<Vec<EaeInstance>> {
    require_file(path, what)?;
    r.load(path)
}

/// Trains every seed of `r` and writes the run directory.
pub fn run_training(r: &Resolved) -> CliResult<RunSummary> {
    let train_set = load_split(r, &r.data.train, "training data")?;
    let dev = r.data.dev.as_deref().map(|p| load_split(r, p, "dev data")).transpose()?;
    let test = r.data.test.as_deref().map(|p| load_split(r, p, "test data")).transpose()?;
    if let Some(p) = &r.init_from {
        require_file(p, "pretrained weights")?;
    }

    let mut all: Vec<&[EaeInstance]> = vec![&train_set];
    all.extend(dev.as_deref());
    all.extend(test.as_deref());
    let markers = max_markers(&all);
    let (tokenizer, tok_info, vocab) = match &r.tokenizer {
        Some(path) => (
            AnyTokenizer::hf(path, markers)?,
            TokenizerInfo::Hf {
                path: path.clone(),
                max_markers: markers,
            },
            None,
        ),
        None => {
            let v = WordVocab::for_corpus(markers, &train_set, &r.registry);
            let info = TokenizerInfo::Word {
                path: VOCAB.into(),
                size: v.vocab_size(),
                max_markers: markers,
            };
            (AnyTokenizer::Word(v.clone()), info, Some(v))
        }
    };
    let model_cfg = r.model_config(tokenizer.as_dyn().vocab_size())?;

    let runs: Vec<SeedLayout> = r
        .seeds
        .iter()
        .map(|s| SeedLayout {
            seed: *s,
            checkpoint: format!("seed-{s}/{CHECKPOINT}"),
            metrics: format!("seed-{s}/{METRICS}"),
        })
        .collect();
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        scheme: r.scheme,
        profile: r.profile,
        dataset: r.dataset,
        seeds: r.seeds.clone(),
        train: r.train.clone(),
        model: model_cfg.clone(),
        ablation: r.ablation,
        data: r.data.clone(),
        registry: RegistryInfo {
            source: r.registry_source.clone(),
            hash: r.registry.content_hash(),
            event_types: r.registry.len(),
        },
        tokenizer: tok_info,
        init_from: r.init_from.clone(),
        workers: r.workers,
        layout: Layout {
            manifest: MANIFEST.into(),
            registry: REGISTRY.into(),
            summary: SUMMARY.into(),
            runs: runs.clone(),
        },
    };
    write_json(&r.out.join(MANIFEST), &manifest)?;
    write(&r.out.join(REGISTRY), r.registry.to_jsonl())?;
    if let Some(v) = &vocab {
        write_json(&r.out.join(VOCAB), v)?;
    }

    let mut feat = Featurizer::new(&r.registry, tokenizer.as_dyn(), &r.train, r.ablation);
    feat.workers = r.workers;
    let (split, eval_set) = match (&test, &dev) {
        (Some(t), _) => ("test", t),
        (None, Some(d)) => ("dev", d),
        (None, None) => ("train", &train_set),
    };
    let mut results = Vec::with_capacity(runs.len());
    for layout in &runs {
        let t0 = Instant::now();
        let cfg = TrainConfig {
            seed: layout.seed,
            ..r.train.clone()
        };
        let model = TabEae::new(model_cfg.clone(), layout.seed, DType::F32).map_err(runtime)?;
        if let Some(p) = &r.init_from {
            let rep = import::import_roberta(&model, p).map_err(runtime)?;
            log(
                r.quiet,
                format!(
                    "seed {}: imported {} tensors, {} kept at initialization, {} new vocabulary rows",
                    layout.seed,
                    rep.loaded.len(),
                    rep.kept.len(),
                    rep.new_vocab_rows
                ),
            );
        }
        let metrics = r.out.join(&layout.metrics);
        if let Some(dir) = metrics.parent() {
            fs::create_dir_all(dir).map_err(runtime)?;
        }
        let outcome = train(
            &model,
            &feat,
            &train_set,
            r.scheme,
            &cfg,
            TrainOptions {
                dev: dev.as_deref(),
                metrics_path: Some(metrics),
                log_every: 10,
                ..TrainOptions::default()
            },
        )
        .map_err(runtime)?;
        let extra = json!({
            "manifest": manifest,
            "seed": layout.seed,
            "vocab": vocab,
            "registry": r.registry.to_jsonl(),
        });
        checkpoint::save(r.out.join(&layout.checkpoint), &model, &extra).map_err(runtime)?;
        let preds = predict_corpus(&model, &feat, eval_set, r.scheme.infer_mode).map_err(runtime)?;
        let rep = score(eval_set, &preds).map_err(runtime)?;
        log(
            r.quiet,
            format!(
                "[{}] seed {}: {split} Arg-I {:.4} Arg-C {:.4} ({:.1}s)",
                r.ablation.label(),
                layout.seed,
                rep.arg_i.f1,
                rep.arg_c.f1,
                t0.elapsed().as_secs_f64()
            ),
        );
        results.push(SeedResult {
            seed: layout.seed,
            checkpoint: layout.checkpoint.clone(),
            best_dev_arg_c: outcome.best_dev_arg_c,
            best_step: outcome.best_step,
            final_loss: outcome.losses.last().copied(),
            arg_i: rep.arg_i,
            arg_c: rep.arg_c,
        });
    }
    let f1 = |f: fn(&SeedResult) -> f64| MeanStd::of(&results.iter().map(f).collect::<Vec<_>>());
    let summary = RunSummary {
        label: r.ablation.label(),
        split: split.into(),
        arg_i_f1: f1(|s| s.arg_i.f1),
        arg_c_f1: f1(|s| s.arg_c.f1),
        runs: results,
    };
    write_json(&r.out.join(SUMMARY), &summary)?;
    Ok(summary)
}

pub fn train_cmd(args: TrainArgs) -> CliResult<()> {
    let r = Resolved::from_args(&args.run)?;
    let s = run_training(&r)?;
    println!(
        "{} seed(s) on {}: Arg-I {:.4} ± {:.4}, Arg-C {:.4} ± {:.4}",
        s.runs.len(),
        s.split,
        s.arg_i_f1.mean,
        s.arg_i_f1.std,
        s.arg_c_f1.mean,
        s.arg_c_f1.std
    );
    Ok(())
}

pub fn ablate(args: AblateArgs) -> CliResult<()> {
    let base = Resolved::from_args(&args.run)?;
    let mut rows = Vec::new();
    for v in &args.variants {
        let mut ablation = base.ablation;
        match v.as_str() {
            "full" => {}
            "no-saam" => ablation.saam = false,
            "no-pet" => ablation.pet = false,
            "no-prompts" => ablation.prompts = false,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown variant `{other}` (full, no-saam, no-pet or no-prompts)"
                )))
            }
        }
        let mut r = base.clone();
        r.ablation = ablation;
        r.out = base.out.join(v);
        rows.push((v.clone(), run_training(&r)?));
    }
    let mut table = String::from("| variant | Arg-I F1 | Arg-C F1 |\n|---|---|---|\n");
    for (v, s) in &rows {
        table.push_str(&format!(
            "| {} ({v}) | {:.2} ± {:.2} | {:.2} ± {:.2} |\n",
            s.label,
            100.0 * s.arg_i_f1.mean,
            100.0 * s.arg_i_f1.std,
            100.0 * s.arg_c_f1.mean,
            100.0 * s.arg_c_f1.std
        ));
    }
    let summaries: Vec<&RunSummary> = rows.iter().map(|(_, s)| s).collect();
    write_json(&base.out.join("ablation.json"), &summaries)?;
    write(&base.out.join("ablation.md"), &table)?;
    print!("{table}");
    Ok(())
}

/// A checkpoint with everything needed to featurize new data.
pub struct Loaded {
    pub model: TabEae,
    pub manifest: RunManifest,
    pub seed: u64,
    pub registry: PromptRegistry,
    pub tokenizer: AnyTokenizer,
}

pub fn load_checkpoint(path: &Path) -> CliResult<Loaded> {
    require_file(path, "checkpoint")?;
    let (model, extra) = checkpoint::load(path, DType::F32).map_err(runtime)?;
    let bad = |what: &str| CliError::Runtime(format!("checkpoint {} has no {what} in its metadata", path.display()));
    let manifest: RunManifest =
        serde_json::from_value(extra.get("manifest").cloned().ok_or_else(|| bad("run manifest"))?).map_err(runtime)?;
    let seed = extra.get("seed").and_then(|s| s.as_u64()).ok_or_else(|| bad("seed"))?;
    let registry = PromptRegistry::from_jsonl(extra.get("registry").and_then(|s| s.as_str()).ok_or_else(|| bad("registry"))?)
        .map_err(runtime)?;
    if registry.content_hash() != manifest.registry.hash {
        return Err(CliError::Runtime("stored registry does not match the manifest hash".into()));
    }
    let tokenizer = match &manifest.tokenizer {
        TokenizerInfo::Word { .. } => {
            let mut v: WordVocab =
                serde_json::from_value(extra.get("vocab").cloned().ok_or_else(|| bad("vocabulary"))?).map_err(runtime)?;
            v.reindex();
            AnyTokenizer::Word(v)
        }
        TokenizerInfo::Hf { path, max_markers } => AnyTokenizer::hf(path, *max_markers)?,
    };
    if tokenizer.as_dyn().vocab_size() != model.config.vocab_size {
        return Err(CliError::Runtime(format!(
            "tokenizer has {} entries but the model expects {}",
            tokenizer.as_dyn().vocab_size(),
            model.config.vocab_size
        )));
    }
    Ok(Loaded {
        model,
        manifest,
        seed,
        registry,
        tokenizer,
    })
}

fn predict_with(l: &Loaded, data: &Path, format: &str, mode: Option<Mode>) -> CliResult<(Vec<EaeInstance>, Vec<Prediction>, Mode)> {
    let format = parse_format(format)?;
    require_file(data, "data")?;
    let corpus = load_corpus(data, format, Some(&l.registry)).map_err(runtime)?;
    let feat = Featurizer::new(&l.registry, l.tokenizer.as_dyn(), &l.manifest.train, l.manifest.ablation);
    let mode = mode.unwrap_or(l.manifest.scheme.infer_mode);
    let preds = predict_corpus(&l.model, &feat, &corpus, mode).map_err(runtime)?;
    Ok((corpus, preds, mode))
}

pub fn predict(args: PredictArgs) -> CliResult<()> {
    parse_format(&args.format)?;
    let l = load_checkpoint(&args.checkpoint)?;
    let (_, preds, _) = predict_with(&l, &args.data, &args.format, args.mode)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(runtime)?;
    }
    write_predictions(&args.out, &preds).map_err(runtime)
}

/// Report files kept in memory until every one of them is ready.
fn report_files(gold: &[EaeInstance], report: &EvalReport, analyses: &[Analysis]) -> Vec<(String, String)> {
    let mut files = Vec::new();
    if analyses.contains(&Analysis::Distance) {
        files.push(("distance.svg".into(), distance_svg(&report.buckets["distance"])));
    }
    if analyses.contains(&Analysis::Buckets) {
        files.push(("event_counts.svg".into(), event_count_histogram_svg(gold)));
    }
    files
}

fn print_report(report: &EvalReport) {
    println!(
        "Arg-I P {:.4} R {:.4} F1 {:.4} | Arg-C P {:.4} R {:.4} F1 {:.4}",
        report.arg_i.p, report.arg_i.r, report.arg_i.f1, report.arg_c.p, report.arg_c.r, report.arg_c.f1
    );
    for (name, rows) in &report.buckets {
        for b in rows {
            println!(
                "  {name:>8} {:>10} support {:>5}  Arg-I {:.4}  Arg-C {:.4}",
                b.label, b.support, b.arg_i.f1, b.arg_c.f1
            );
        }
    }
}

fn dedup(analyses: &[Analysis]) -> Vec<Analysis> {
    let mut out: Vec<Analysis> = Vec::new();
    for a in analyses {
        if !out.contains(a) {
            out.push(*a);
        }
    }
    out
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    parse_format(&args.format)?;
    let analyses = dedup(&args.analyses);
    let l = load_checkpoint(&args.checkpoint)?;
    let (gold, preds, mode) = predict_with(&l, &args.data, &args.format, args.mode)?;
    let report = analyze(&gold, &preds, &analyses, &DISTANCE_EDGES).map_err(runtime)?;
    let doc = json!({
        "checkpoint": args.checkpoint,
        "data": args.data,
        "seed": l.seed,
        "scheme": l.manifest.scheme,
        "inference_mode": mode,
        "ablation": l.manifest.ablation,
        "manifest": l.manifest,
        "report": report,
    });
    let mut preds_buf = Vec::new();
    for p in &preds {
        serde_json::to_writer(&mut preds_buf, p).map_err(runtime)?;
        preds_buf.push(b'\n');
    }
    let files = report_files(&gold, &report, &analyses);
    write(&args.out.join("predictions.jsonl"), preds_buf)?;
    for (name, body) in files {
        write(&args.out.join(name), body)?;
    }
    write_json(&args.out.join("report.json"), &doc)?;
    print_report(&report);
    Ok(())
}

pub fn analyze_cmd(args: AnalyzeArgs) -> CliResult<()> {
    let format = parse_format(&args.format)?;
    let analyses = dedup(&args.analyses);
    let registry = args.registry.as_deref().map(registry_from).transpose()?;
    require_file(&args.gold, "gold corpus")?;
    require_file(&args.pred, "predictions")?;
    let gold = load_corpus(&args.gold, format, registry.as_ref().map(|(r, _)| r)).map_err(runtime)?;
    let preds = read_predictions(&args.pred).map_err(runtime)?;
    let report = analyze(&gold, &preds, &analyses, &DISTANCE_EDGES).map_err(runtime)?;
    let files = report_files(&gold, &report, &analyses);
    for (name, body) in files {
        write(&args.out.join(name), body)?;
    }
    let doc = json!({
        "gold": args.gold,
        "predictions": args.pred,
        "report": report,
    });
    write_json(&args.out.join("report.json"), &doc)?;
    print_report(&report);
    Ok(())
}
