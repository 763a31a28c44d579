use std::collections::BTreeMap;

use lowres_nmt::corpus::Origin;
use lowres_nmt::decoder::DecodeConfig;
use lowres_nmt::lm::MonoCorpus;
use lowres_nmt::pipeline::backtranslate;
use lowres_nmt::eval::CaseMode;
use lowres_nmt::model::{ModelConfig, ModelKind, Parameters};
use lowres_nmt::tokenizer::{learn_merges, SubwordVocabulary};
use lowres_nmt::trainer::{
    adam_step, lr_at_step, transfer_init, validate_bleu, AdamConfig, AdamState, Checkpoint, TrainConfig, TrainData,
    TrainError, TrainingSession,
};
use lowres_nmt::tensor::Tensor;
use rand::{Rng, SeedableRng};

#[test]
fn schedule_examples() {
    let lr = lr_at_step(4000, 512, 4000).unwrap();
    assert!((lr - (512.0f64 * 4000.0).powf(-0.5)).abs() < 1e-15);
    assert!((lr - 6.988e-4).abs() < 1e-7, "{lr}");
    for s in 1..4000 {
        assert!(lr_at_step(s + 1, 512, 4000).unwrap() > lr_at_step(s, 512, 4000).unwrap());
    }
    for s in 4000..8000 {
        assert!(lr_at_step(s + 1, 512, 4000).unwrap() < lr_at_step(s, 512, 4000).unwrap());
    }
    assert!(matches!(lr_at_step(0, 512, 4000), Err(TrainError::Usage(_))));
}

fn single(name: &str, w: f32) -> Parameters {
    let mut m = BTreeMap::new();
    m.insert(name.to_string(), Tensor::new(vec![1], vec![w]).unwrap());
    Parameters::from_map(m)
}

#[test]
fn adam_first_step_closed_form() {
    let mut p = single("w", 1.0);
    let mut state = AdamState::default();
    let grads = BTreeMap::from([("w".to_string(), vec![0.5f32])]);
    let cfg = AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 };
    adam_step(&mut p, &grads, &mut state, 1e-3, &cfg).unwrap();
    // m̂ = 0.5, v̂ = 0.25, update = lr · 0.5 / (0.5 + eps)
    let oracle = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
    assert!((p.get("w").unwrap().values()[0] as f64 - oracle).abs() < 1e-7);
    assert!((p.get("w").unwrap().values()[0] - 0.999).abs() < 1e-6);
}

#[test]
fn adam_zero_gradient_and_determinism() {
    let cfg = AdamConfig::default();
    let mut p = single("w", 0.25);
    let mut state = AdamState::default();
    let zero = BTreeMap::from([("w".to_string(), vec![0.0f32])]);
    adam_step(&mut p, &zero, &mut state, 1e-2, &cfg).unwrap();
    assert_eq!(p.get("w").unwrap().values()[0], 0.25);

    let run = || {
        let mut p = single("w", 0.25);
        let mut s = AdamState::default();
        let mut traj = Vec::new();
        for i in 0..20 {
            let g = BTreeMap::from([("w".to_string(), vec![(i as f32 * 0.37).sin()])]);
            adam_step(&mut p, &g, &mut s, 1e-2, &cfg).unwrap();
            traj.push(p.get("w").unwrap().values()[0].to_bits());
        }
        traj
    };
    assert_eq!(run(), run());
}

pub fn copy_vocab() -> SubwordVocabulary {
    let words = ["ак", "кара", "зур", "кечкенә", "яңа", "иске"];
    learn_merges([words.join(" ")], 4 + 40).unwrap()
}

pub fn copy_sentences(n: usize, seed: u64) -> Vec<String> {
    let words = ["ак", "кара", "зур", "кечкенә", "яңа", "иске"];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(2..5);
            (0..len).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

fn copy_data(vocab: &SubwordVocabulary, sents: &[String]) -> TrainData {
    TrainData::Parallel(sents.iter().map(|s| (vocab.encode(s), vocab.encode(s))).collect())
}

fn small_cfg(vocab: &SubwordVocabulary) -> ModelConfig {
    ModelConfig { max_len: 32, ..ModelConfig::desk(vocab.len(), ModelKind::Translation) }
}

fn tcfg() -> TrainConfig {
    TrainConfig { batch_tokens: 256, warmup_steps: 40, lr_scale: 0.3, seed: 3, ..TrainConfig::default() }
}

#[test]
fn repeated_batch_loss_halves_in_fifty_steps() {
    let vocab = copy_vocab();
    let sents = copy_sentences(8, 1);
    let data = copy_data(&vocab, &sents);
    let t = TrainConfig { batch_tokens: 1000, warmup_steps: 10, lr_scale: 0.5, label_smoothing: 0.0, ..tcfg() };
    let cfg = ModelConfig { dropout: 0.0, ..small_cfg(&vocab) };
    let mut s = TrainingSession::new(cfg, vocab.fingerprint(), t).unwrap();
    let first = s.train_epoch(&data, 0).unwrap();
    assert_eq!(first.steps, 1);
    let mut last = first;
    for e in 1..50 {
        last = s.train_epoch(&data, e).unwrap();
    }
    assert_eq!(s.step(), 50);
    assert!(last.mean_loss <= 0.5 * first.mean_loss, "{} -> {}", first.mean_loss, last.mean_loss);
}

#[test]
fn step_counter_drives_learning_rate() {
    let vocab = copy_vocab();
    let data = copy_data(&vocab, &copy_sentences(60, 2));
    let mut s = TrainingSession::new(small_cfg(&vocab), vocab.fingerprint(), tcfg()).unwrap();
    let a = s.train_epoch(&data, 0).unwrap();
    assert_eq!(s.step(), a.steps as u64);
    assert!(a.steps > 1);
    assert_eq!(a.last_lr, 0.3 * lr_at_step(s.step(), 64, 40).unwrap());
    let b = s.train_epoch(&data, 1).unwrap();
    assert_eq!(s.step(), (a.steps + b.steps) as u64);
    assert_eq!(b.last_lr, 0.3 * lr_at_step(s.step(), 64, 40).unwrap());
}

#[test]
fn training_is_deterministic() {
    let vocab = copy_vocab();
    let data = copy_data(&vocab, &copy_sentences(40, 4));
    let run = || {
        let mut s = TrainingSession::new(small_cfg(&vocab), vocab.fingerprint(), tcfg()).unwrap();
        let losses: Vec<u64> = (0..2).map(|e| s.train_epoch(&data, e).unwrap().mean_loss.to_bits()).collect();
        (losses, s.checkpoint(true).to_bytes())
    };
    assert_eq!(run(), run());
}

#[test]
fn frozen_embeddings_stay_bitwise_constant() {
    let vocab = copy_vocab();
    let data = copy_data(&vocab, &copy_sentences(40, 5));
    let t = TrainConfig { freeze: vec!["*embedding*".into()], ..tcfg() };
    let mut s = TrainingSession::new(small_cfg(&vocab), vocab.fingerprint(), t).unwrap();
    assert_eq!(s.frozen(), ["embedding"]);
    let before = s.params.clone();
    s.train_epoch(&data, 0).unwrap();
    assert_eq!(before.get("embedding").unwrap().values(), s.params.get("embedding").unwrap().values());
    assert!(!s.optimizer.m.contains_key("embedding"));
    assert_ne!(before.get("decoder.layers.0.ffn.w1").unwrap().values(), s.params.get("decoder.layers.0.ffn.w1").unwrap().values());
}

#[test]
fn empty_corpus_and_kind_mismatch_are_errors() {
    let vocab = copy_vocab();
    let mut s = TrainingSession::new(small_cfg(&vocab), vocab.fingerprint(), tcfg()).unwrap();
    assert!(matches!(s.train_epoch(&TrainData::Parallel(vec![]), 0), Err(TrainError::Config(_))));
    assert!(matches!(s.train_epoch(&TrainData::Mono(vec![vec![5]]), 0), Err(TrainError::Usage(_))));
    let bad = TrainConfig { batch_tokens: 8, ..tcfg() };
    assert!(matches!(TrainingSession::new(small_cfg(&vocab), 0, bad), Err(TrainError::Config(_))));
    let bad = TrainConfig { warmup_steps: 0, ..tcfg() };
    assert!(matches!(TrainingSession::new(small_cfg(&vocab), 0, bad), Err(TrainError::Config(_))));
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let vocab = copy_vocab();
    let data = copy_data(&vocab, &copy_sentences(30, 6));
    let mut s = TrainingSession::new(small_cfg(&vocab), vocab.fingerprint(), tcfg()).unwrap();
    s.train_epoch(&data, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    for with_opt in [false, true] {
        let ck = s.checkpoint(with_opt);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        for (name, t) in ck.params.iter() {
            let a: Vec<u32> = t.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.params.get(name).unwrap().values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{name}");
        }
        assert_eq!(back.to_bytes(), ck.to_bytes());
        back.bind_vocab(&vocab, false).unwrap();
    }
    let mut bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..6], b"LRNMT1");
    bytes[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(TrainError::Format(_))));

    let other = learn_merges(["совсем другой корпус"], 30).unwrap();
    let ck = s.checkpoint(false);
    assert!(matches!(ck.bind_vocab(&other, false), Err(TrainError::Fingerprint { .. })));
}

#[test]
fn transfer_starts_from_parent_exactly() {
    let vocab = copy_vocab();
    let data = copy_data(&vocab, &copy_sentences(30, 7));
    let mut parent = TrainingSession::new(small_cfg(&vocab), vocab.fingerprint(), tcfg()).unwrap();
    parent.train_epoch(&data, 0).unwrap();
    let ck = parent.checkpoint(true);
    let child = transfer_init(&ck, &vocab, TrainConfig { seed: 99, ..tcfg() }).unwrap();
    assert_eq!(child.step(), 0);
    assert!(child.optimizer.m.is_empty());
    assert!(child.frozen().is_empty());
    for (name, t) in ck.params.iter() {
        let a: Vec<u32> = t.values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = child.params.get(name).unwrap().values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "{name}");
    }
    let other = learn_merges(["совсем другой корпус"], 30).unwrap();
    let err = transfer_init(&ck, &other, tcfg()).unwrap_err();
    assert!(matches!(err, TrainError::Transfer { .. }));
    assert!(err.to_string().contains("shared vocabulary"));

    let frozen = TrainConfig { freeze: vec!["*embedding*".into()], ..tcfg() };
    let mut child = transfer_init(&ck, &vocab, frozen).unwrap();
    for e in 0..2 {
        child.train_epoch(&data, e).unwrap();
    }
    assert_eq!(child.params.get("embedding").unwrap().values(), ck.params.get("embedding").unwrap().values());
}

#[test]
fn copy_task_validation_bleu() {
    let vocab = copy_vocab();
    let train = copy_sentences(600, 8);
    let valid = copy_sentences(40, 9);
    let data = copy_data(&vocab, &train);
    let mut s = TrainingSession::new(small_cfg(&vocab), vocab.fingerprint(), tcfg()).unwrap();
    let dec = DecodeConfig::greedy(20);
    let bleu = |s: &TrainingSession| {
        validate_bleu(&s.translator().unwrap(), &vocab, &valid, &valid, &dec, 1, CaseMode::Insensitive).unwrap().score
    };
    let untrained = bleu(&s);
    assert!(untrained < 5.0, "{untrained}");
    let mut curve = Vec::new();
    for e in 0..25 {
        s.train_epoch(&data, e).unwrap();
        curve.push(bleu(&s));
        if *curve.last().unwrap() == 100.0 && e >= 2 {
            break;
        }
    }
    eprintln!("copy-task validation BLEU per epoch: {curve:?}");
    assert!(curve[0] <= curve[1] && curve[1] <= curve[2], "{curve:?}");
    assert!((curve.last().unwrap() - 100.0).abs() < 1e-9, "{curve:?}");
    assert_eq!(bleu(&s), bleu(&s));

    // back-translating with a copy model reproduces the monolingual side
    let mono = MonoCorpus::new("tt", &valid[..30]);
    let (syn, skipped) = backtranslate(&s.checkpoint(false), &vocab, &mono, "tt", &dec, 1).unwrap();
    assert_eq!(skipped, 0);
    assert_eq!(syn.count_origin(Origin::Synthetic), 30);
    for p in syn.pairs() {
        assert_eq!(p.source, p.target);
    }
}
