use lowres_nmt::eval::{brevity_penalty, clipped_ngram_counts, corpus_bleu, CaseMode, EvalError};
use proptest::prelude::*;

fn toks(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Quadratic-time reference: for each hypothesis n-gram, consume one unused
/// matching reference n-gram.
fn naive_counts(hyp: &[&str], reference: &[&str], n: usize) -> (usize, usize) {
    if hyp.len() < n {
        return (0, 0);
    }
    let mut pool: Vec<&[&str]> = if reference.len() >= n { reference.windows(n).collect() } else { vec![] };
    let mut matched = 0;
    for g in hyp.windows(n) {
        if let Some(i) = pool.iter().position(|r| *r == g) {
            pool.swap_remove(i);
            matched += 1;
        }
    }
    (matched, hyp.len() - n + 1)
}

#[test]
fn cat_sat_precisions() {
    let h = toks("the cat sat on the mat");
    let r = toks("the cat is on the mat");
    let got: Vec<_> = (1..=4).map(|n| clipped_ngram_counts(&h, &r, n).unwrap()).collect();
    assert_eq!(got, [(5, 6), (3, 5), (1, 4), (0, 3)]);
    for n in 1..=4 {
        assert_eq!(got[n - 1], naive_counts(&h, &r, n));
    }
}

#[test]
fn identical_and_short() {
    let h = toks("a b a b c");
    for n in 1..=4 {
        let (m, t) = clipped_ngram_counts(&h, &h, n).unwrap();
        assert_eq!(m, t);
    }
    assert_eq!(clipped_ngram_counts(&toks("a b"), &toks("a b"), 3).unwrap(), (0, 0));
}

#[test]
fn brevity_penalty_cases() {
    assert!((brevity_penalty(2, 4) - (-1.0f64).exp()).abs() < 1e-12);
    assert!((brevity_penalty(2, 4) - 0.367879).abs() < 1e-6);
    assert_eq!(brevity_penalty(5, 5), 1.0);
    assert_eq!(brevity_penalty(0, 3), 0.0);
    assert_eq!(brevity_penalty(6, 5), 1.0);
}

#[test]
fn two_pair_corpus_scores_53_90() {
    let hyps = ["the cat sat on the mat", "a b c d"];
    let refs = ["the cat is on the mat", "a b c d"];
    let r = corpus_bleu(&hyps, &refs, CaseMode::Sensitive).unwrap();
    assert_eq!(r.counts, [(9, 10), (6, 8), (3, 6), (1, 4)]);
    assert_eq!(r.bp, 1.0);
    let oracle = 100.0 * (0.9f64 * 0.75 * 0.5 * 0.25).powf(0.25);
    assert!((r.score - oracle).abs() < 1e-9);
    assert!((r.score - 53.90).abs() < 0.01, "{}", r.score);
}

#[test]
fn identical_corpora_score_100() {
    let c = ["один два три четыре", "бер ике өч дүрт биш"];
    let r = corpus_bleu(&c, &c, CaseMode::Sensitive).unwrap();
    assert!((r.score - 100.0).abs() < 1e-9);
    assert_eq!(format!("{:.2}", r.score), "100.00");
}

#[test]
fn case_modes() {
    let ins = corpus_bleu(&["The Cat"], &["the cat"], CaseMode::Insensitive).unwrap();
    let sen = corpus_bleu(&["The Cat"], &["the cat"], CaseMode::Sensitive).unwrap();
    assert!((ins.score - 100.0).abs() < 1e-9);
    assert!(sen.score < 100.0);
}

#[test]
fn count_mismatch_is_alignment_error() {
    assert_eq!(corpus_bleu(&["a"], &["a", "b"], CaseMode::Sensitive), Err(EvalError::Alignment { hyps: 1, refs: 2 }));
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "A", "b", "B", "c", "ä", "Ä", "d"]), 0..9)
        .prop_map(|w| w.join(" "))
}

fn corpus() -> impl Strategy<Value = Vec<(String, String)>> {
    prop::collection::vec((sentence(), sentence()), 1..12)
}

proptest! {
    #[test]
    fn counts_match_naive_oracle(h in sentence(), r in sentence(), n in 1usize..=4) {
        prop_assert_eq!(clipped_ngram_counts(&toks(&h), &toks(&r), n).unwrap(), naive_counts(&toks(&h), &toks(&r), n));
    }

    #[test]
    fn permutation_and_duplication_invariant(c in corpus(), seed in any::<u64>()) {
        let (h, r): (Vec<String>, Vec<String>) = c.iter().cloned().unzip();
        let base = corpus_bleu(&h, &r, CaseMode::Sensitive).unwrap();
        prop_assert!(base.score.is_finite());
        let mut idx: Vec<usize> = (0..c.len()).collect();
        idx.sort_by_key(|i| (*i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let ph: Vec<&String> = idx.iter().map(|&i| &h[i]).collect();
        let pr: Vec<&String> = idx.iter().map(|&i| &r[i]).collect();
        let perm = corpus_bleu(&ph, &pr, CaseMode::Sensitive).unwrap();
        prop_assert!((perm.score - base.score).abs() < 1e-9);
        let dh: Vec<&String> = h.iter().chain(&h).collect();
        let dr: Vec<&String> = r.iter().chain(&r).collect();
        let dup = corpus_bleu(&dh, &dr, CaseMode::Sensitive).unwrap();
        prop_assert!((dup.score - base.score).abs() < 1e-9);
    }

    #[test]
    fn insensitive_at_least_sensitive(c in corpus()) {
        let (h, r): (Vec<String>, Vec<String>) = c.into_iter().unzip();
        let s = corpus_bleu(&h, &r, CaseMode::Sensitive).unwrap();
        let i = corpus_bleu(&h, &r, CaseMode::Insensitive).unwrap();
        prop_assert!(i.score + 1e-9 >= s.score);
        for n in 0..4 {
            prop_assert!(i.counts[n].0 >= s.counts[n].0);
        }
    }

    #[test]
    fn zero_when_any_order_unmatched(c in corpus()) {
        let (h, r): (Vec<String>, Vec<String>) = c.into_iter().unzip();
        let rep = corpus_bleu(&h, &r, CaseMode::Sensitive).unwrap();
        prop_assert!(!rep.score.is_nan());
        if rep.counts.iter().any(|&(m, t)| m == 0 && t > 0) {
            prop_assert_eq!(rep.score, 0.0);
        }
        prop_assert!((0.0..=100.0 + 1e-9).contains(&rep.score));
    }
}
