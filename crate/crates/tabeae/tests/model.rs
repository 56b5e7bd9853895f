mod common;

use std::collections::HashMap;

use candle::{DType, Device, Tensor};
use tabeae::checkpoint::{self, shape_diff};
use tabeae::import::{import_roberta, roberta_name_map};
use tabeae::loss::{assignment_targets, bipartite_loss, sample_loss};
use tabeae::{train, ModelConfig, ModelError, TabEae, TrainOptions};
use tabeae_core::scheme::{expand_instance, Ablation, Mode, SchemeConfig};
use tabeae_core::span;

use common::Fixture;

fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

fn multi_event(fx: &Fixture) -> (usize, &tabeae_core::corpus::EaeInstance) {
    fx.corpus.iter().enumerate().find(|(_, x)| x.num_events() >= 2).unwrap()
}

#[test]
fn encoder_output_has_one_row_per_token() {
    let fx = Fixture::new(1, 4, 2);
    let model = fx.model(0, DType::F32);
    let h = model.encode(&[1, 5, 6, 7, 2], false).unwrap();
    assert_eq!(h.dims(), &[5, 64]);
}

#[test]
fn token_order_matters() {
    let fx = Fixture::new(1, 4, 2);
    let model = fx.model(0, DType::F32);
    let a = values(&model.encode(&[1, 5, 6, 2], false).unwrap().narrow(0, 1, 1).unwrap());
    let b = values(&model.encode(&[1, 6, 5, 2], false).unwrap().narrow(0, 2, 1).unwrap());
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-4));
}

#[test]
fn same_seed_same_weights() {
    let fx = Fixture::new(1, 4, 2);
    let a = fx.model(7, DType::F32).snapshot().unwrap();
    let b = fx.model(7, DType::F32).snapshot().unwrap();
    let c = fx.model(8, DType::F32).snapshot().unwrap();
    for ((na, ta), (nb, tb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert_eq!(values(ta), values(tb));
    }
    assert!(a.iter().zip(&c).any(|((_, x), (_, y))| values(x) != values(y)));
}

#[test]
fn parameter_groups_split_cross_attention() {
    let fx = Fixture::new(1, 4, 2);
    let model = fx.model(0, DType::F32);
    let (cross, rest) = model.param_groups();
    assert_eq!(cross.len(), 2 * 8);
    assert_eq!(cross.len() + rest.len(), model.manifest().len());
}

#[test]
fn contextualize_ignores_cross_attention() {
    let fx = Fixture::new(1, 4, 2);
    let model = fx.model(0, DType::F64);
    let e = model.encode(&[1, 5, 6, 7, 2], false).unwrap();
    let before = values(&model.contextualize(&e, false).unwrap());
    for (name, shape) in model.manifest() {
        if name.contains(".cross.") {
            let t = Tensor::full(0.3f64, shape.as_slice(), &Device::Cpu).unwrap();
            model.var(name).unwrap().set(&t).unwrap();
        }
    }
    assert_eq!(before, values(&model.contextualize(&e, false).unwrap()));
}

#[test]
fn forward_shapes_follow_the_table() {
    let fx = Fixture::new(2, 10, 3);
    let feat = fx.featurizer(Ablation::default());
    let model = fx.model(0, DType::F32);
    let (i, x) = multi_event(&fx);
    let input = feat.build(x, &expand_instance(x, i, Mode::Multi, feat.window)[0]).unwrap();
    let out = model.forward(&input, true, false).unwrap();
    let slots = input.table.num_slots();
    assert_eq!(out.logits_start.dims(), &[slots, input.marked.len()]);
    assert_eq!(out.logits_end.dims(), &[slots, input.marked.len()]);
    assert_eq!(out.h_table.dims(), &[input.table.len(), 64]);
}

#[test]
fn every_ablation_runs() {
    let fx = Fixture::new(3, 6, 3);
    let model = fx.model(0, DType::F32);
    for ablation in [
        Ablation::default(),
        Ablation { saam: false, ..Default::default() },
        Ablation { pet: false, ..Default::default() },
        Ablation { prompts: false, ..Default::default() },
    ] {
        let feat = fx.featurizer(ablation);
        for (i, x) in fx.corpus.iter().enumerate() {
            for s in expand_instance(x, i, Mode::Multi, feat.window) {
                let input = feat.build(x, &s).unwrap();
                if !ablation.saam {
                    assert_eq!(input.mask.count_allowed(), input.table.len() * input.table.len());
                }
                let out = model.forward(&input, ablation.pet, false).unwrap();
                assert!(values(&out.logits_start).iter().all(|v| v.is_finite()), "{}", ablation.label());
            }
        }
    }
}

#[test]
fn mask_size_mismatch_is_rejected() {
    let fx = Fixture::new(2, 10, 3);
    let feat = fx.featurizer(Ablation::default());
    let model = fx.model(0, DType::F32);
    let (i, x) = multi_event(&fx);
    let input = feat.build(x, &expand_instance(x, i, Mode::Multi, feat.window)[0]).unwrap();
    let e_text = model.encode(&input.marked.ids, false).unwrap();
    let e_tab = model.table_embeddings(&input, &e_text, true, false).unwrap();
    let small = tabeae_core::mask::StructureMask::full(3);
    assert!(model.decode_table(&e_tab, &small, &e_text, false).is_err());
}

#[test]
fn overlong_inputs_are_reported() {
    let mut fx = Fixture::new(2, 10, 3);
    fx.train.max_encoder_len = 5;
    let feat = fx.featurizer(Ablation::default());
    let x = &fx.corpus[0];
    let err = feat.build(x, &expand_instance(x, 0, Mode::Multi, feat.window)[0]).unwrap_err();
    assert!(matches!(err, ModelError::Overlength { max: 5, .. }), "{err}");
}

#[test]
fn candle_loss_matches_reference() {
    let fx = Fixture::new(4, 10, 3);
    let feat = fx.featurizer(Ablation::default());
    let model = fx.model(0, DType::F64);
    let (i, x) = multi_event(&fx);
    let input = feat.build(x, &expand_instance(x, i, Mode::Multi, feat.window)[0]).unwrap();
    let out = model.forward(&input, true, false).unwrap();
    let targets = assignment_targets(&out.logits_start, &out.logits_end, &input, Default::default()).unwrap();
    let got: f64 = bipartite_loss(&out.logits_start, &out.logits_end, &targets)
        .unwrap()
        .to_scalar()
        .unwrap();
    let ls: Vec<Vec<f64>> = out.logits_start.to_vec2().unwrap();
    let le: Vec<Vec<f64>> = out.logits_end.to_vec2().unwrap();
    let want = span::bipartite_loss(&ls, &le, &targets).unwrap();
    approx::assert_relative_eq!(got, want, max_relative = 1e-12);
    assert!(got > 0.0);
    let via_sample: f64 = sample_loss(&out.logits_start, &out.logits_end, &input, Default::default())
        .unwrap()
        .unwrap()
        .to_scalar()
        .unwrap();
    assert_eq!(got, via_sample);
}

#[test]
fn gold_spans_become_targets() {
    let fx = Fixture::new(4, 10, 3);
    let feat = fx.featurizer(Ablation::default());
    let model = fx.model(0, DType::F32);
    let (i, x) = multi_event(&fx);
    let input = feat.build(x, &expand_instance(x, i, Mode::Multi, feat.window)[0]).unwrap();
    let out = model.forward(&input, true, false).unwrap();
    let targets = assignment_targets(&out.logits_start, &out.logits_end, &input, Default::default()).unwrap();
    let mut want: Vec<_> = input.gold.iter().flatten().map(|(_, s)| *s).collect();
    let mut got: Vec<_> = targets.into_iter().filter(|t| !t.is_empty()).collect();
    want.sort();
    got.sort();
    assert_eq!(got, want);
}

#[test]
fn short_training_lowers_the_loss_and_logs_metrics() {
    let mut fx = Fixture::new(5, 12, 2);
    fx.train.steps = 40;
    let feat = fx.featurizer(Ablation::default());
    let model = fx.model(0, DType::F32);
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("metrics.jsonl");
    let opts = TrainOptions {
        dev: Some(&fx.corpus[..4]),
        metrics_path: Some(metrics.clone()),
        log_every: 10,
        ..Default::default()
    };
    let out = train(&model, &feat, &fx.corpus, SchemeConfig::MULTI_MULTI, &fx.train, opts).unwrap();
    assert_eq!(out.losses.len(), 40);
    let head: f64 = out.losses[..5].iter().sum();
    let tail: f64 = out.losses[35..].iter().sum();
    assert!(tail < head, "{head} -> {tail}");
    let lines = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(lines.lines().count(), 4);
    assert!(out.best_dev_arg_c.is_some());
    assert!(lines.lines().last().unwrap().contains("dev_arg_c"));
}

#[test]
fn zero_steps_leave_the_weights_untouched() {
    let mut fx = Fixture::new(5, 6, 2);
    fx.train.steps = 0;
    let feat = fx.featurizer(Ablation::default());
    let model = fx.model(0, DType::F32);
    let before = model.snapshot().unwrap();
    let out = train(&model, &feat, &fx.corpus, SchemeConfig::MULTI_SINGLE, &fx.train, TrainOptions::default()).unwrap();
    assert!(out.losses.is_empty());
    for ((n, a), (_, b)) in before.iter().zip(model.snapshot().unwrap()) {
        let d = (a - &b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(d, 0.0, "{n}");
    }
}

#[test]
fn featurizing_on_threads_keeps_order() {
    let fx = Fixture::new(8, 20, 3);
    let mut feat = fx.featurizer(Ablation::default());
    let samples = tabeae_core::scheme::expand_instances(&fx.corpus, Mode::Multi, feat.window);
    let one = feat.build_all(&fx.corpus, &samples).unwrap();
    feat.workers = 4;
    let four = feat.build_all(&fx.corpus, &samples).unwrap();
    assert_eq!(one, four);
}

#[test]
fn checkpoint_round_trip() {
    let fx = Fixture::new(6, 6, 2);
    let feat = fx.featurizer(Ablation::default());
    let model = fx.model(3, DType::F32);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.safetensors");
    let extra = serde_json::json!({"note": "x"});
    checkpoint::save(&path, &model, &extra).unwrap();
    let (loaded, got_extra) = checkpoint::load(&path, DType::F32).unwrap();
    assert_eq!(got_extra, extra);
    assert_eq!(loaded.config, model.config);
    let x = &fx.corpus[0];
    let input = feat.build(x, &expand_instance(x, 0, Mode::Multi, feat.window)[0]).unwrap();
    let a = model.forward(&input, true, false).unwrap();
    let b = loaded.forward(&input, true, false).unwrap();
    assert_eq!(values(&a.logits_start), values(&b.logits_start));
}

#[test]
fn checkpoint_mismatch_lists_differences() {
    let fx = Fixture::new(6, 6, 2);
    let model = fx.model(3, DType::F32);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.safetensors");
    checkpoint::save(&path, &model, &serde_json::Value::Null).unwrap();
    let other = TabEae::new(
        ModelConfig {
            decoder_layers: 1,
            ..fx.model_config()
        },
        0,
        DType::F32,
    )
    .unwrap();
    let err = checkpoint::load_into(&path, &other).unwrap_err().to_string();
    assert!(err.contains("+ decoder.1.attn.q.weight"), "{err}");
}

#[test]
fn shape_diff_marks_missing_changed_and_extra() {
    let expected = vec![("a".to_string(), vec![2, 3]), ("b".to_string(), vec![4])];
    let found = [("a".to_string(), vec![3, 3]), ("c".to_string(), vec![1])].into_iter().collect();
    let d = shape_diff(&expected, &found);
    assert_eq!(d.len(), 3);
    assert!(d[0].starts_with("~ a"));
    assert!(d[1].starts_with("- b"));
    assert!(d[2].starts_with("+ c"));
}

#[test]
fn roberta_import_maps_names_and_extends_vocabulary() {
    let fx = Fixture::new(6, 6, 2);
    let model = fx.model(3, DType::F32);
    let cfg = &model.config;
    let shapes: HashMap<&str, &Vec<usize>> = model.manifest().iter().map(|(n, s)| (n.as_str(), s)).collect();
    let mut src = HashMap::new();
    for (k, (ours, theirs)) in roberta_name_map(cfg.encoder_layers, cfg.decoder_layers).iter().enumerate() {
        let mut shape = shapes[ours.as_str()].clone();
        if ours == "embeddings.word" {
            shape[0] -= 2;
        }
        let name = if k % 2 == 0 { format!("roberta.{theirs}") } else { theirs.clone() };
        src.insert(name, Tensor::full(k as f32, shape.as_slice(), &Device::Cpu).unwrap());
    }
    src.insert(
        "embeddings.token_type_embeddings.weight".into(),
        Tensor::full(0.5f32, (1, cfg.hidden), &Device::Cpu).unwrap(),
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("roberta.safetensors");
    candle::safetensors::save(&src, &path).unwrap();

    let before = values(model.var("embeddings.word").unwrap().as_tensor());
    let report = import_roberta(&model, &path).unwrap();
    assert_eq!(report.new_vocab_rows, 2);
    assert!(report.kept.iter().all(|n| n.contains(".cross.") || n.starts_with("span.") || n.contains(".norm2.")));
    assert!(report.kept.iter().any(|n| n == "decoder.0.cross.q.weight"));

    let word = values(model.var("embeddings.word").unwrap().as_tensor());
    let rows = cfg.vocab_size * cfg.hidden;
    assert!(word[..rows - 2 * cfg.hidden].iter().all(|&v| v == 0.5));
    for (w, b) in word[rows - 2 * cfg.hidden..].iter().zip(&before[rows - 2 * cfg.hidden..]) {
        approx::assert_relative_eq!(*w, b + 0.5, epsilon = 1e-6);
    }
    let q = values(model.var("decoder.1.attn.q.weight").unwrap().as_tensor());
    let k = roberta_name_map(cfg.encoder_layers, cfg.decoder_layers)
        .iter()
        .position(|(o, _)| o == "decoder.1.attn.q.weight")
        .unwrap();
    assert!(q.iter().all(|&v| v == k as f64));
}

#[test]
fn roberta_import_reports_missing_tensors() {
    let fx = Fixture::new(6, 6, 2);
    let model = fx.model(3, DType::F32);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.safetensors");
    let src: HashMap<String, Tensor> =
        HashMap::from([("x".to_string(), Tensor::zeros(1, DType::F32, &Device::Cpu).unwrap())]);
    candle::safetensors::save(&src, &path).unwrap();
    let err = import_roberta(&model, &path).unwrap_err().to_string();
    assert!(err.contains("embeddings.word_embeddings.weight"), "{err}");
}
