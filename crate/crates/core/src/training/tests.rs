use super::*;
use crate::model::{clean_examples, examples};
use crate::synth::{generate_corpus, Split, SynthConfig};

fn tiny_corpus() -> crate::synth::Corpus {
    let cfg = SynthConfig {
        feature_dim: 8,
        vocab: 4,
        template_contrast: 1.0,
        template_min_distance: 3.0,
        min_tokens: 2,
        max_tokens: 4,
        clip_frames: 40,
        n_train: 48,
        n_dev: 12,
        n_test: 12,
        ..SynthConfig::default()
    };
    generate_corpus(&cfg, 3).unwrap()
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        feature_dim: 8,
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        ffn_dim: 32,
    }
}

fn frozen_encoder(seed: u64) -> Arc<EncoderModel<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = EncoderModel::new(tiny_encoder(), &mut rng).unwrap();
    e.freeze();
    Arc::new(e)
}

fn tune_config(m: usize) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        prompts: m,
        max_steps: 30,
        warmup_steps: 5,
        batch_size: 2,
        eval_interval: 15,
        eval_limit: 6,
        log_interval: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn pretraining_reduces_loss() {
    let c = tiny_corpus();
    let train = clean_examples::<f64>(c.split(Split::Train));
    let dev = examples::<f64>(c.split(Split::DevClean));
    let cfg = PretrainConfig {
        encoder: tiny_encoder(),
        lr: 3e-3,
        max_steps: 200,
        warmup_steps: 20,
        target_wer: 1.1,
        eval_interval: 200,
        log_interval: 10,
        ..PretrainConfig::default()
    };
    let (enc, rec) = pretrain_backbone(&train, &dev, 4, &cfg).unwrap();
    let curve = rec.loss_curve();
    assert!(curve.last().unwrap().1 < curve[0].1, "{curve:?}");
    assert!(enc.is_frozen());
    assert_eq!(rec.frozen_hash(), Some(enc.frozen_hash().as_str()));
}

#[test]
fn unreachable_target_reports_the_curve() {
    let c = tiny_corpus();
    let train = clean_examples::<f64>(c.split(Split::Train));
    let dev = examples::<f64>(c.split(Split::DevClean));
    let cfg = PretrainConfig {
        encoder: tiny_encoder(),
        max_steps: 20,
        target_wer: 0.0,
        eval_interval: 10,
        log_interval: 5,
        ..PretrainConfig::default()
    };
    match pretrain_backbone(&train, &dev, 4, &cfg) {
        Err(Error::TrainingFailure { curve, .. }) => assert_eq!(curve.len(), 4),
        other => panic!("expected training failure, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn tuning_leaves_the_encoder_bit_identical() {
    let c = tiny_corpus();
    let enc = frozen_encoder(1);
    let before = enc.frozen_hash();
    let snapshot = (*enc).clone();
    let train = examples::<f64>(c.split(Split::Train));
    let dev = examples::<f64>(c.split(Split::DevNoisy));
    let out = prompt_tune(&enc, &train, &dev, &[0.5; 16], 4, &tune_config(3)).unwrap();
    assert_eq!(out.model.encoder.frozen_hash(), before);
    assert_eq!(*out.model.encoder, snapshot);
    assert_eq!(out.record.dev_wer().len(), 2);
}

#[test]
fn frozen_weights_receive_no_gradient() {
    let c = tiny_corpus();
    let enc = frozen_encoder(2);
    let ex = &examples::<f64>(c.split(Split::Train))[0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let prompts = init_prompts::<f64>(2, &[1.0; 16], &mut rng).unwrap();
    let head = DecoderHead::<f64>::new(16, 4, None, &mut rng);
    let mut tape = Tape::new();
    let ev = enc.bind(&mut tape, true);
    let p = tape.param(Arc::clone(prompts.tensor().unwrap()));
    let hv = head.bind(&mut tape, true);
    let fwd = enc.forward_tape(&mut tape, &ev, &ex.features, Some(p)).unwrap();
    let logits = hv.logits(&mut tape, fwd.frames).unwrap();
    let loss = ctc_loss(&mut tape, logits, &ex.tokens).unwrap();
    let g = tape.backward(loss).unwrap();
    for v in ev.all() {
        assert!(g.get(v).is_none());
    }
    assert!(g.get(p).is_some());
    assert_eq!(g.populated(), 1 + hv.all().len());
}

#[test]
fn baseline_arm_trains_only_the_head() {
    let c = tiny_corpus();
    let enc = frozen_encoder(4);
    let train = examples::<f64>(c.split(Split::Train));
    let dev = examples::<f64>(c.split(Split::DevNoisy));
    let cfg = tune_config(0);
    let out = prompt_tune(&enc, &train, &dev, &[0.5; 16], 4, &cfg).unwrap();
    assert_eq!(out.model.m(), 0);
    assert_eq!(out.record.arm(), "baseline");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let initial = DecoderHead::<f64>::new(16, 4, None, &mut rng);
    assert_ne!(out.model.head, initial);
}

#[test]
fn cached_baseline_matches_the_uncached_path() {
    // one step of the cached head-only loop equals the same step taken
    // through a full forward with constant encoder weights
    let c = tiny_corpus();
    let enc = frozen_encoder(5);
    let ex = &examples::<f64>(c.split(Split::Train))[3];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let head = DecoderHead::<f64>::new(16, 4, None, &mut rng);

    let cached = enc.forward(&ex.features, &PromptMatrix::empty(16)).unwrap().frames;
    let mut t1 = Tape::new();
    let h1 = head.bind(&mut t1, true);
    let f1 = t1.constant(cached);
    let l1 = h1.logits(&mut t1, f1).unwrap();
    let loss1 = ctc_loss(&mut t1, l1, &ex.tokens).unwrap();
    let g1 = t1.backward(loss1).unwrap();

    let mut t2 = Tape::new();
    let ev = enc.bind(&mut t2, false);
    let h2 = head.bind(&mut t2, true);
    let fwd = enc.forward_tape(&mut t2, &ev, &ex.features, None).unwrap();
    let l2 = h2.logits(&mut t2, fwd.frames).unwrap();
    let loss2 = ctc_loss(&mut t2, l2, &ex.tokens).unwrap();
    let g2 = t2.backward(loss2).unwrap();

    assert_eq!(t1.value(loss1), t2.value(loss2));
    for (a, b) in h1.all().into_iter().zip(h2.all()) {
        assert_eq!(g1.get(a), g2.get(b));
    }
}

#[test]
fn runs_are_deterministic_in_f64() {
    let c = tiny_corpus();
    let enc = frozen_encoder(6);
    let train = examples::<f64>(c.split(Split::Train));
    let dev = examples::<f64>(c.split(Split::DevNoisy));
    let a = prompt_tune(&enc, &train, &dev, &[0.5; 16], 4, &tune_config(2)).unwrap();
    let b = prompt_tune(&enc, &train, &dev, &[0.5; 16], 4, &tune_config(2)).unwrap();
    assert_eq!(a.record, b.record);
    assert_eq!(a.model, b.model);
}

#[test]
fn unfrozen_encoder_is_rejected() {
    let c = tiny_corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let enc = Arc::new(EncoderModel::<f64>::new(tiny_encoder(), &mut rng).unwrap());
    let train = examples::<f64>(c.split(Split::Train));
    assert!(prompt_tune(&enc, &train, &train, &[0.5; 16], 4, &tune_config(2)).is_err());
}

#[test]
fn exploding_rate_aborts_with_the_step() {
    let c = tiny_corpus();
    let enc = frozen_encoder(7);
    let train = examples::<f64>(c.split(Split::Train));
    let cfg = TrainConfig {
        lr: 1e200,
        warmup_steps: 0,
        ..tune_config(2)
    };
    match prompt_tune(&enc, &train, &train, &[0.5; 16], 4, &cfg) {
        Err(Error::NanLoss { step }) => assert!(step < cfg.max_steps),
        other => panic!("expected NaN abort, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn trainable_count_is_prompts_plus_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut enc = EncoderModel::<f32>::new(EncoderConfig::default(), &mut rng).unwrap();
    enc.freeze();
    let model = PromptedModel {
        encoder: Arc::new(enc),
        prompts: init_prompts(20, &[1.0; 64], &mut rng).unwrap(),
        head: DecoderHead::new(64, 12, None, &mut rng),
    };
    assert_eq!(model.trainable_parameter_count(), 20 * 64 + 64 * 13 + 13);
}

#[test]
fn grid_search_contracts() {
    let c = tiny_corpus();
    let enc = frozen_encoder(8);
    let train = examples::<f64>(c.split(Split::Train));
    let dev = examples::<f64>(c.split(Split::DevClean));
    let cfg = TrainConfig {
        max_steps: 300,
        eval_interval: 300,
        ..tune_config(2)
    };
    let single = grid_search_lr(&[7e-5], &enc, &train, &dev, &[0.5; 16], 4, &cfg).unwrap();
    assert_eq!(single.best_lr, 7e-5);
    let g = grid_search_lr(&[1e-9, 3e-3], &enc, &train, &dev, &[0.5; 16], 4, &cfg).unwrap();
    assert!(g.rows[0].1 >= g.rows[1].1, "{:?}", g.rows);
    let again = grid_search_lr(&[1e-9, 3e-3], &enc, &train, &dev, &[0.5; 16], 4, &cfg).unwrap();
    assert_eq!(g, again);
}

#[test]
fn grid_validation() {
    let cfg = TrainConfig {
        grid_search: true,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    assert!(cfg.validate().is_err());
    let g = log_grid(2e-5, 3e-4, 4);
    assert!((g[0] - 2e-5).abs() < 1e-18 && (g[3] - 3e-4).abs() < 1e-16);
}

#[test]
fn prompt_init_matches_the_requested_spread() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let std = [0.5, 2.0];
    let p = init_prompts::<f64>(4000, &std, &mut rng).unwrap();
    for (j, &s) in std.iter().enumerate() {
        let col: Vec<f64> = (0..p.m()).map(|k| p.row(k)[j]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        assert!(mean.abs() < 0.1 * s && (sd / s - 1.0).abs() < 0.05, "{mean} {sd}");
    }
}
