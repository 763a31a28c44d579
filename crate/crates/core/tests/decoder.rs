use std::collections::HashMap;
use std::path::Path;

use lowres_nmt::decoder::{
    beam_search, fuse_step_scores, greedy_decode, postnorm_fusion, shallow_fusion, translate_corpus,
    ConditionalTable, DecodeConfig, DecodeError, FusionConfig, LanguageModelScorer, PostNormKind, StepScorer, Translator,
};
use lowres_nmt::model::{init_params, ModelConfig, ModelKind};
use lowres_nmt::tokenizer::{learn_merges, TokenId, BOS, EOS};
use proptest::prelude::*;

fn fixture(name: &str) -> ConditionalTable {
    ConditionalTable::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)).unwrap()
}

fn exact(beam: usize, max_len: usize) -> DecodeConfig {
    DecodeConfig { beam_size: beam, max_len, length_penalty: 0.0, fusion: FusionConfig::none() }
}

/// Every finished sequence up to `max_len` tokens, scored by the product of
/// table probabilities.
fn enumerate_finished(table: &ConditionalTable, max_len: usize) -> Vec<(Vec<TokenId>, f64)> {
    let content: Vec<TokenId> = (3..table.tokens().len() as TokenId).collect();
    let mut out = Vec::new();
    let mut frontier: Vec<(Vec<TokenId>, f64)> = vec![(vec![], 0.0)];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for (ctx, score) in &frontier {
            let probs = table.probabilities(ctx).unwrap();
            let ln = |p: f64| if p > 0.0 { p.ln() } else { -1e9 };
            let mut done = ctx.clone();
            done.push(EOS);
            out.push((done, score + ln(probs[EOS as usize])));
            for &t in &content {
                let mut c = ctx.clone();
                c.push(t);
                next.push((c, score + ln(probs[t as usize])));
            }
        }
        frontier = next;
    }
    out
}

fn argmax(seqs: &[(Vec<TokenId>, f64)]) -> (Vec<TokenId>, f64) {
    seqs.iter().fold((vec![], f64::NEG_INFINITY), |best, (s, v)| if *v > best.1 { (s.clone(), *v) } else { best })
}

#[test]
fn fixture_beam_and_greedy_find_a_b_eos() {
    let t = fixture("abc_table.txt");
    let (a, b) = (3, 4);
    let oracle = argmax(&enumerate_finished(&t, 3));
    assert_eq!(oracle.0, vec![a, b, EOS]);
    assert!((oracle.1 - 0.378f64.ln()).abs() < 1e-12);
    assert!((oracle.1 - -0.973).abs() < 1e-3);

    let beam = beam_search(&t, None, &exact(4, 3)).unwrap();
    assert_eq!(beam.ids, vec![BOS, a, b, EOS]);
    assert!(beam.finished);
    assert!((beam.log_score - oracle.1).abs() < 1e-9);

    let greedy = greedy_decode(&t, None, 3, &FusionConfig::none()).unwrap();
    assert_eq!(greedy.ids, vec![BOS, a, b, EOS]);
    assert_eq!(greedy_decode(&t, None, 3, &FusionConfig::none()).unwrap(), greedy);
    let one = greedy_decode(&t, None, 1, &FusionConfig::none()).unwrap();
    assert_eq!(one.ids.len(), 2);
}

#[test]
fn wider_beam_can_return_a_worse_sequence() {
    let t = fixture("wider_beam_worse.txt");
    let narrow = beam_search(&t, None, &exact(1, 4)).unwrap();
    let wide = beam_search(&t, None, &exact(2, 4)).unwrap();
    assert!(narrow.finished && wide.finished);
    assert!((narrow.log_score - (0.5f64 * 0.4 * 0.8).ln()).abs() < 1e-12);
    assert!((wide.log_score - (0.49f64 * 0.45 * 0.7 * 0.8).ln()).abs() < 1e-12);
    assert!(wide.log_score < narrow.log_score);
    // exhaustive width recovers the optimum
    let full = beam_search(&t, None, &exact(1000, 4)).unwrap();
    assert!((full.log_score - argmax(&enumerate_finished(&t, 4)).1).abs() < 1e-12);
}

#[test]
fn shallow_fusion_arithmetic() {
    let fused = shallow_fusion(&[-1.0, -2.0], &[-2.0, -0.1], 0.5);
    assert_eq!(fused, vec![-2.0, -2.05]);
    assert!(fused[0] > fused[1]);
}

#[test]
fn postnorm_normalizations() {
    let sum = postnorm_fusion(&[0.7, 0.3], &[0.5, 0.5], PostNormKind::Sum).unwrap();
    assert!((sum[0].exp() - 0.7).abs() < 1e-12 && (sum[1].exp() - 0.3).abs() < 1e-12);
    let soft = postnorm_fusion(&[0.7, 0.3], &[0.5, 0.5], PostNormKind::Softmax).unwrap();
    let oracle = 0.35f64.exp() / (0.35f64.exp() + 0.15f64.exp());
    assert!((soft[0].exp() - oracle).abs() < 1e-12);
    assert!((soft[0].exp() - 0.550).abs() < 5e-4 && (soft[1].exp() - 0.450).abs() < 5e-4);
}

#[test]
fn zero_weight_fusion_on_fixture_is_bitwise_none() {
    let tm = fixture("abc_table.txt");
    let lm = fixture("wider_beam_worse.txt");
    for beam in [1, 2, 4] {
        let cfg = exact(beam, 4);
        let none = beam_search(&tm, None, &cfg).unwrap();
        let fused = beam_search(&tm, Some(&lm), &DecodeConfig { fusion: FusionConfig::shallow(0.0), ..cfg }).unwrap();
        assert_eq!(none.ids, fused.ids);
        assert_eq!(none.log_score.to_bits(), fused.log_score.to_bits());
    }
}

#[test]
fn fusion_without_language_model_is_an_error() {
    let tm = fixture("abc_table.txt");
    let cfg = DecodeConfig { fusion: FusionConfig::shallow(0.1), ..exact(2, 3) };
    assert!(matches!(beam_search(&tm, None, &cfg), Err(DecodeError::Fusion(_))));
}

struct Uniform(usize);

impl StepScorer for Uniform {
    fn vocab_size(&self) -> usize {
        self.0
    }
    fn next_logits(&self, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>, DecodeError> {
        Ok(prefixes.iter().map(|_| vec![0.0; self.0]).collect())
    }
}

#[test]
fn fusion_vocab_mismatch() {
    let tm = fixture("abc_table.txt");
    let cfg = DecodeConfig { fusion: FusionConfig::shallow(0.1), ..exact(2, 3) };
    assert_eq!(beam_search(&tm, Some(&Uniform(7)), &cfg), Err(DecodeError::Dimension { tm: 5, lm: 7 }));
}

fn table_strategy() -> impl Strategy<Value = ConditionalTable> {
    (4usize..=5, prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 40)).prop_map(|(v, raw)| {
        let tokens: Vec<String> = ["<pad>", "<s>", "</s>", "a", "b"][..v].iter().map(|s| s.to_string()).collect();
        let mut contexts: Vec<Vec<TokenId>> = vec![vec![]];
        let mut i = 0;
        while i < contexts.len() && contexts.len() < raw.len() {
            if contexts[i].len() < 3 {
                for t in 3..v as TokenId {
                    let mut c = contexts[i].clone();
                    c.push(t);
                    contexts.push(c);
                }
            }
            i += 1;
        }
        let mut rows = HashMap::new();
        for (ctx, r) in contexts.into_iter().zip(&raw) {
            let mut row = vec![0.0; v];
            let cells: Vec<usize> = (2..v).collect();
            // cube to get peaked rows and exact zeros when a draw is tiny
            let w: Vec<f64> = cells.iter().enumerate().map(|(k, _)| if r[k] < 0.05 { 0.0 } else { r[k].powi(3) }).collect();
            let z: f64 = w.iter().sum();
            if z == 0.0 {
                row[2] = 1.0;
            } else {
                for (k, &c) in cells.iter().enumerate() {
                    row[c] = w[k] / z;
                }
                let s: f64 = row.iter().sum();
                row[2] += 1.0 - s;
                row[2] = row[2].max(0.0);
            }
            rows.insert(ctx, row);
        }
        let mut default = vec![0.0; v];
        default[2] = 1.0;
        ConditionalTable::new(tokens, rows, Some(default)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exhaustive_beam_matches_enumeration(t in table_strategy(), max_len in 1usize..=4) {
        let all = enumerate_finished(&t, max_len);
        let oracle = argmax(&all);
        let width = all.len() * t.tokens().len();
        let beam = beam_search(&t, None, &exact(width, max_len)).unwrap();
        prop_assert!(beam.finished);
        prop_assert!((beam.log_score - oracle.1).abs() < 1e-9, "{} vs {}", beam.log_score, oracle.1);
        for b in 1..=4 {
            let narrow = beam_search(&t, None, &exact(b, max_len)).unwrap();
            if narrow.finished {
                prop_assert!(beam.log_score >= narrow.log_score - 1e-12);
            }
        }
    }

    #[test]
    fn beam_one_equals_greedy(t in table_strategy(), max_len in 1usize..=4) {
        let beam = beam_search(&t, None, &exact(1, max_len)).unwrap();
        let greedy = greedy_decode(&t, None, max_len, &FusionConfig::none()).unwrap();
        prop_assert_eq!(beam, greedy);
    }

    #[test]
    fn zero_weight_shallow_is_bitwise_none(
        tm in prop::collection::vec(-20.0f64..20.0, 2..40),
        seed in any::<u64>(),
    ) {
        let lm: Vec<f64> = tm.iter().enumerate().map(|(i, _)| ((i as u64 ^ seed) % 97) as f64 * -0.3).collect();
        let none = fuse_step_scores(&tm, None, &FusionConfig::none()).unwrap();
        let fused = fuse_step_scores(&tm, Some(&lm), &FusionConfig::shallow(0.0)).unwrap();
        prop_assert_eq!(none.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), fused.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_lm_sum_postnorm_is_identity(raw in prop::collection::vec(0.0f64..1.0, 2..50)) {
        let z: f64 = raw.iter().sum();
        prop_assume!(z > 1e-6);
        let p: Vec<f64> = raw.iter().map(|v| v / z).collect();
        let u = vec![1.0 / p.len() as f64; p.len()];
        let out = postnorm_fusion(&p, &u, PostNormKind::Sum).unwrap();
        for (o, q) in out.iter().zip(&p) {
            prop_assert!((o.exp() - q).abs() < 1e-9 || (*q == 0.0 && *o == -1e9));
        }
    }

    #[test]
    fn finished_scores_are_sums_of_step_scores(t in table_strategy(), beam in 1usize..6) {
        let h = beam_search(&t, None, &exact(beam, 4)).unwrap();
        let mut total = 0.0;
        for i in 1..h.ids.len() {
            let p = t.probabilities(&h.ids[1..i]).unwrap()[h.ids[i] as usize];
            total += if p > 0.0 { p.ln() } else { -1e9 };
        }
        prop_assert!((h.log_score - total).abs() < 1e-9);
    }
}

fn tiny_vocab() -> lowres_nmt::tokenizer::SubwordVocabulary {
    let corpus = ["мин китап укыйм", "син китап укыйсың", "ул китап укый"];
    learn_merges(corpus, 40).unwrap()
}

#[test]
fn translate_corpus_preserves_order_and_count() {
    let vocab = tiny_vocab();
    let cfg = ModelConfig { dropout: 0.0, ..ModelConfig::desk(vocab.len(), ModelKind::Translation) };
    let params = init_params(&cfg, 4).unwrap();
    let model = Translator::new(&cfg, &params, vocab.fingerprint()).unwrap();
    let sents: Vec<String> = (0..12).map(|i| ["мин китап", "син укый", "ул"][i % 3].repeat(1 + i % 2)).collect();
    let dcfg = DecodeConfig { beam_size: 2, max_len: 6, ..DecodeConfig::default() };
    let empty: Vec<String> = vec![];
    assert!(translate_corpus(&model, None, &vocab, &empty, &dcfg, 2).unwrap().is_empty());
    let serial = translate_corpus(&model, None, &vocab, &sents, &dcfg, 1).unwrap();
    let parallel = translate_corpus(&model, None, &vocab, &sents, &dcfg, 8).unwrap();
    assert_eq!(serial.len(), sents.len());
    assert_eq!(serial, parallel);
}

#[test]
fn model_fusion_checks_fingerprints_and_zero_weight() {
    let vocab = tiny_vocab();
    let cfg = ModelConfig { dropout: 0.0, ..ModelConfig::desk(vocab.len(), ModelKind::Translation) };
    let lcfg = ModelConfig { dropout: 0.0, ..ModelConfig::desk(vocab.len(), ModelKind::LanguageModel) };
    let params = init_params(&cfg, 1).unwrap();
    let lparams = init_params(&lcfg, 2).unwrap();
    let model = Translator::new(&cfg, &params, vocab.fingerprint()).unwrap();
    let lm = LanguageModelScorer::new(&lcfg, &lparams, vocab.fingerprint()).unwrap();
    let bad_lm = LanguageModelScorer::new(&lcfg, &lparams, vocab.fingerprint() ^ 1).unwrap();
    assert!(LanguageModelScorer::new(&cfg, &params, 0).is_err());
    let sents = ["мин китап укыйм", "ул"];
    let base = DecodeConfig { beam_size: 3, max_len: 5, ..DecodeConfig::default() };
    let none = translate_corpus(&model, None, &vocab, &sents, &base, 1).unwrap();
    let zero = translate_corpus(&model, Some(&lm), &vocab, &sents, &DecodeConfig { fusion: FusionConfig::shallow(0.0), ..base }, 1).unwrap();
    assert_eq!(none, zero);
    let bad = translate_corpus(&model, Some(&bad_lm), &vocab, &sents, &DecodeConfig { fusion: FusionConfig::shallow(0.003), ..base }, 1).unwrap();
    assert!(bad.iter().all(|r| matches!(r, Err(DecodeError::Fusion(_)))));

    // the step-level scores of the real models agree bitwise at zero weight
    let scorer = model.encode_source(&vocab.encode("мин китап")).unwrap();
    let prefixes = vec![vec![BOS, 5], vec![BOS, 6]];
    let tm = scorer.next_logits(&prefixes).unwrap();
    let lmv = lm.next_logits(&prefixes).unwrap();
    for (t, l) in tm.iter().zip(&lmv) {
        let a = fuse_step_scores(t, None, &FusionConfig::none()).unwrap();
        let b = fuse_step_scores(t, Some(l), &FusionConfig::shallow(0.0)).unwrap();
        assert_eq!(a, b);
    }
}
