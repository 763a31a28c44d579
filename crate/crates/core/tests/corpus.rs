use std::fs;

use lowres_nmt::corpus::{
    apply_origin_tags, deduplicate, load_parallel, mix, split, write_corpus, CorpusError, Origin,
    ParallelCorpus, SentencePair, SplitSpec,
};
use proptest::prelude::*;

fn numbered(n: usize, prefix: &str, origin: Origin) -> ParallelCorpus {
    let pairs = (0..n)
        .map(|i| SentencePair { source: format!("{prefix}s{i}"), target: format!("{prefix}t{i}"), origin })
        .collect();
    ParallelCorpus::new("ru", "tt", pairs).unwrap()
}

#[test]
fn load_three_line_files() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = (dir.path().join("a.ru"), dir.path().join("a.tt"));
    fs::write(&s, "один\n  два \nтри\n").unwrap();
    fs::write(&t, "бер\nике\nөч\n").unwrap();
    let (c, stats) = load_parallel(&s, &t, "ru", "tt").unwrap();
    assert_eq!(c.len(), 3);
    assert_eq!(stats.dropped_empty, 0);
    assert_eq!(c.pairs()[1].source, "два");
}

#[test]
fn unequal_line_counts_are_an_alignment_error() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = (dir.path().join("a.ru"), dir.path().join("a.tt"));
    fs::write(&s, "1\n2\n3\n").unwrap();
    fs::write(&t, "1\n2\n3\n4\n").unwrap();
    let err = load_parallel(&s, &t, "ru", "tt").unwrap_err();
    assert!(matches!(err, CorpusError::Alignment { src_lines: 3, tgt_lines: 4, .. }));
    let msg = err.to_string();
    assert!(msg.contains('3') && msg.contains('4'));
}

#[test]
fn empty_target_line_drops_its_pair() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = (dir.path().join("a.ru"), dir.path().join("a.tt"));
    fs::write(&s, "1\n2\n3\n").unwrap();
    fs::write(&t, "1\n   \n3\n").unwrap();
    let (c, stats) = load_parallel(&s, &t, "ru", "tt").unwrap();
    assert_eq!(c.len(), 2);
    assert_eq!(stats.dropped_empty, 1);
}

#[test]
fn dedup_counts_against_counting_oracle() {
    let mut pairs: Vec<SentencePair> = numbered(3, "", Origin::Authentic).into_pairs();
    pairs.push(pairs[0].clone());
    pairs.push(pairs[2].clone());
    let c = ParallelCorpus::new("ru", "tt", pairs.clone()).unwrap();
    let oracle = {
        let mut distinct = Vec::new();
        for p in &pairs {
            if !distinct.contains(p) {
                distinct.push(p.clone());
            }
        }
        distinct.len()
    };
    assert_eq!(oracle, 3);
    assert_eq!(deduplicate(&c).len(), oracle);
}

#[test]
fn split_matches_reported_sizes() {
    let c = numbered(324_000, "", Origin::Authentic);
    let s = split(&c, SplitSpec { valid_size: 2000, test_size: 2000, seed: 7 }).unwrap();
    assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (320_000, 2000, 2000));
    let again = split(&c, SplitSpec { valid_size: 2000, test_size: 2000, seed: 7 }).unwrap();
    assert_eq!(s, again);
}

#[test]
fn mix_reported_corpus_without_cap_conserves_pairs() {
    let parallel = numbered(320_000, "p", Origin::Authentic);
    let synthetic = numbered(2_530_000, "b", Origin::Synthetic);
    let mixed = mix(&parallel, &synthetic, None, 1).unwrap();
    assert_eq!(mixed.len(), 2_850_000);
    assert_eq!(mixed.count_origin(Origin::Synthetic), 2_530_000);
}

#[test]
fn mix_caps_synthetic_at_ratio() {
    let parallel = numbered(1000, "p", Origin::Authentic);
    let synthetic = numbered(10_000, "b", Origin::Synthetic);
    let mixed = mix(&parallel, &synthetic, Some(8.0), 1).unwrap();
    assert_eq!(mixed.len(), 9000);
    assert_eq!(mixed.count_origin(Origin::Synthetic), 8000);
    assert_eq!(mixed.count_origin(Origin::Authentic), 1000);
    assert_eq!(mixed, mix(&parallel, &synthetic, Some(8.0), 1).unwrap());
}

#[test]
fn write_then_load_round_trips_with_lf_and_tags() {
    let dir = tempfile::tempdir().unwrap();
    let parallel = numbered(4, "p", Origin::Authentic);
    let synthetic = numbered(3, "b", Origin::Synthetic);
    let c = mix(&parallel, &synthetic, None, 2).unwrap();
    let (s, t, g) = (dir.path().join("x.src"), dir.path().join("x.tgt"), dir.path().join("x.tags"));
    write_corpus(&c, &s, &t, Some(&g)).unwrap();
    let raw = fs::read(&s).unwrap();
    assert!(!raw.contains(&b'\r'));
    assert_eq!(fs::read_to_string(&g).unwrap().lines().count(), c.len());

    let (loaded, _) = load_parallel(&s, &t, "ru", "tt").unwrap();
    let loaded = apply_origin_tags(loaded, &g).unwrap();
    assert_eq!(loaded, c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn split_partitions_the_corpus(n in 3usize..200, v in 0usize..50, t in 0usize..50, seed in any::<u64>()) {
        prop_assume!(v + t < n);
        let c = numbered(n, "", Origin::Authentic);
        let s = split(&c, SplitSpec { valid_size: v, test_size: t, seed }).unwrap();
        prop_assert_eq!(s.valid.len(), v);
        prop_assert_eq!(s.test.len(), t);
        prop_assert_eq!(s.train.len(), n - v - t);
        let mut all: Vec<String> = s.train.sources().chain(s.valid.sources()).chain(s.test.sources()).map(String::from).collect();
        all.sort();
        let mut expect: Vec<String> = c.sources().map(String::from).collect();
        expect.sort();
        prop_assert_eq!(all, expect);
    }

    #[test]
    fn uncapped_mix_conserves_pairs(p in 0usize..100, s in 0usize..300, seed in any::<u64>()) {
        let mixed = mix(&numbered(p, "p", Origin::Authentic), &numbered(s, "b", Origin::Synthetic), None, seed).unwrap();
        prop_assert_eq!(mixed.len(), p + s);
    }

    #[test]
    fn capped_mix_never_exceeds_ratio(p in 1usize..100, s in 0usize..900, r in 0.0f64..10.0) {
        let mixed = mix(&numbered(p, "p", Origin::Authentic), &numbered(s, "b", Origin::Synthetic), Some(r), 0).unwrap();
        let synth = mixed.count_origin(Origin::Synthetic);
        prop_assert!(synth as f64 <= r * p as f64 || synth == s.min((r * p as f64).floor() as usize));
        prop_assert_eq!(synth, if s as f64 > r * p as f64 { (r * p as f64).floor() as usize } else { s });
    }
}
