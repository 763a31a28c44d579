//! Parallel corpus ingestion, deduplication, splitting and
//! authentic/synthetic mixing.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("alignment error: {src} has {src_lines} lines but {tgt} has {tgt_lines}")]
    Alignment { src: PathBuf, tgt: PathBuf, src_lines: usize, tgt_lines: usize },
    #[error("{0}")]
    Config(String),
    #[error("malformed origin tag `{tag}` on line {line} of {path}")]
    Tag { path: PathBuf, line: usize, tag: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Origin {
    Authentic,
    Synthetic,
}

impl Origin {
    pub fn tag(self) -> &'static str {
        match self {
            Origin::Authentic => "A",
            Origin::Synthetic => "S",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
    pub origin: Origin,
}

impl SentencePair {
    pub fn authentic(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self { source: source.into(), target: target.into(), origin: Origin::Authentic }
    }

    pub fn synthetic(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self { source: source.into(), target: target.into(), origin: Origin::Synthetic }
    }
}

/// Positionally aligned sentence pairs for one language direction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub src_lang: String,
    pub tgt_lang: String,
    pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn new(
        src_lang: impl Into<String>,
        tgt_lang: impl Into<String>,
        pairs: Vec<SentencePair>,
    ) -> Result<Self, CorpusError> {
        if let Some(i) = pairs.iter().position(|p| p.source.is_empty() || p.target.is_empty()) {
            return Err(CorpusError::Config(format!("pair {i} has an empty side")));
        }
        Ok(Self { src_lang: src_lang.into(), tgt_lang: tgt_lang.into(), pairs })
    }

    pub fn empty(src_lang: impl Into<String>, tgt_lang: impl Into<String>) -> Self {
        Self { src_lang: src_lang.into(), tgt_lang: tgt_lang.into(), pairs: Vec::new() }
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn into_pairs(self) -> Vec<SentencePair> {
        self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.source.as_str())
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.target.as_str())
    }

    pub fn count_origin(&self, origin: Origin) -> usize {
        self.pairs.iter().filter(|p| p.origin == origin).count()
    }

    /// The same pairs with source and target swapped.
    pub fn reversed(&self) -> Self {
        Self {
            src_lang: self.tgt_lang.clone(),
            tgt_lang: self.src_lang.clone(),
            pairs: self
                .pairs
                .iter()
                .map(|p| SentencePair { source: p.target.clone(), target: p.source.clone(), origin: p.origin })
                .collect(),
        }
    }

    fn with_pairs(&self, pairs: Vec<SentencePair>) -> Self {
        Self { src_lang: self.src_lang.clone(), tgt_lang: self.tgt_lang.clone(), pairs }
    }
}

/// NFC normalization plus surrounding-whitespace trim, applied to every
/// line read from disk.
pub fn normalize_line(line: &str) -> String {
    line.nfc().collect::<String>().trim().to_string()
}

pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    BufReader::new(file)
        .lines()
        .map(|l| l.map(|s| normalize_line(&s)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(path))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub read: usize,
    pub dropped_empty: usize,
}

impl fmt::Display for LoadStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} lines read, {} dropped for an empty side", self.read, self.dropped_empty)
    }
}

pub fn load_parallel(
    src_path: &Path,
    tgt_path: &Path,
    src_lang: &str,
    tgt_lang: &str,
) -> Result<(ParallelCorpus, LoadStats), CorpusError> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(CorpusError::Alignment {
            src: src_path.to_path_buf(),
            tgt: tgt_path.to_path_buf(),
            src_lines: src.len(),
            tgt_lines: tgt.len(),
        });
    }
    let read = src.len();
    let pairs: Vec<SentencePair> = src
        .into_iter()
        .zip(tgt)
        .filter(|(s, t)| !s.is_empty() && !t.is_empty())
        .map(|(s, t)| SentencePair::authentic(s, t))
        .collect();
    let stats = LoadStats { read, dropped_empty: read - pairs.len() };
    if stats.dropped_empty > 0 {
        log::warn!("{}: {stats}", src_path.display());
    }
    Ok((ParallelCorpus::new(src_lang, tgt_lang, pairs)?, stats))
}

/// Reads per-line `A`/`S` origin tags and applies them to `corpus`.
pub fn apply_origin_tags(corpus: ParallelCorpus, tag_path: &Path) -> Result<ParallelCorpus, CorpusError> {
    let tags = read_lines(tag_path)?;
    if tags.len() != corpus.len() {
        return Err(CorpusError::Config(format!(
            "{} has {} tags for {} pairs",
            tag_path.display(),
            tags.len(),
            corpus.len()
        )));
    }
    let pairs = corpus
        .pairs
        .iter()
        .zip(&tags)
        .enumerate()
        .map(|(i, (p, tag))| {
            let origin = match tag.as_str() {
                "A" => Origin::Authentic,
                "S" => Origin::Synthetic,
                other => {
                    return Err(CorpusError::Tag { path: tag_path.to_path_buf(), line: i + 1, tag: other.into() })
                }
            };
            Ok(SentencePair { origin, ..p.clone() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(corpus.with_pairs(pairs))
}

/// Keeps the first occurrence of each exact (source, target) pair.
pub fn deduplicate(corpus: &ParallelCorpus) -> ParallelCorpus {
    let mut seen: HashSet<(&str, &str)> = HashSet::with_capacity(corpus.len());
    let pairs = corpus
        .pairs
        .iter()
        .filter(|p| seen.insert((p.source.as_str(), p.target.as_str())))
        .cloned()
        .collect();
    corpus.with_pairs(pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub valid_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
}

/// Seeded shuffle, then the first `valid_size` pairs go to validation, the
/// next `test_size` to test and the rest to training.
pub fn split(corpus: &ParallelCorpus, spec: SplitSpec) -> Result<Splits, CorpusError> {
    let held_out = spec.valid_size + spec.test_size;
    if held_out >= corpus.len() {
        return Err(CorpusError::Config(format!(
            "split sizes {}+{} leave no training data out of {} pairs",
            spec.valid_size,
            spec.test_size,
            corpus.len()
        )));
    }
    let mut pairs = corpus.pairs.clone();
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let train = pairs.split_off(held_out);
    let test = pairs.split_off(spec.valid_size);
    Ok(Splits { train: corpus.with_pairs(train), valid: corpus.with_pairs(pairs), test: corpus.with_pairs(test) })
}

/// Concatenates authentic and synthetic pairs and shuffles them.
///
/// With `max_ratio = Some(r)` and `|synthetic| / |parallel| > r`, the
/// synthetic side is uniformly subsampled without replacement down to
/// `⌊r·|parallel|⌋` pairs first.
pub fn mix(
    parallel: &ParallelCorpus,
    synthetic: &ParallelCorpus,
    max_ratio: Option<f64>,
    seed: u64,
) -> Result<ParallelCorpus, CorpusError> {
    if parallel.src_lang != synthetic.src_lang || parallel.tgt_lang != synthetic.tgt_lang {
        return Err(CorpusError::Config(format!(
            "cannot mix {}-{} with {}-{}",
            parallel.src_lang, parallel.tgt_lang, synthetic.src_lang, synthetic.tgt_lang
        )));
    }
    if let Some(r) = max_ratio {
        if !(r.is_finite() && r >= 0.0) {
            return Err(CorpusError::Config(format!("mixing ratio {r} must be a non-negative number")));
        }
    }
    if synthetic.pairs.iter().any(|p| p.origin != Origin::Synthetic) {
        return Err(CorpusError::Config("synthetic corpus contains pairs not tagged synthetic".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<SentencePair> = match max_ratio {
        Some(r) if synthetic.len() as f64 > r * parallel.len() as f64 => {
            let keep = ((r * parallel.len() as f64).floor() as usize).min(synthetic.len());
            let mut idx = sample(&mut rng, synthetic.len(), keep).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| synthetic.pairs[i].clone()).collect()
        }
        _ => synthetic.pairs.clone(),
    };
    let mut pairs = parallel.pairs.clone();
    pairs.append(&mut chosen);
    pairs.shuffle(&mut rng);
    Ok(parallel.with_pairs(pairs))
}

/// Drops pairs whose whitespace-token length exceeds `max_len` or whose
/// length ratio exceeds `max_ratio`. Returns the kept corpus and the number
/// of dropped pairs.
pub fn filter_by_length(
    corpus: &ParallelCorpus,
    max_len: Option<usize>,
    max_ratio: Option<f64>,
) -> (ParallelCorpus, usize) {
    let kept: Vec<SentencePair> = corpus
        .pairs
        .iter()
        .filter(|p| {
            let (s, t) = (p.source.split_whitespace().count(), p.target.split_whitespace().count());
            let len_ok = max_len.is_none_or(|m| s <= m && t <= m);
            let ratio_ok = max_ratio.is_none_or(|r| (s.max(t) as f64) <= r * s.min(t).max(1) as f64);
            len_ok && ratio_ok
        })
        .cloned()
        .collect();
    let dropped = corpus.len() - kept.len();
    (corpus.with_pairs(kept), dropped)
}

pub(crate) fn write_lines<'a>(path: &Path, lines: impl Iterator<Item = &'a str>) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for line in lines {
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes the corpus as two aligned LF-terminated files, plus an optional
/// per-line origin tag file.
pub fn write_corpus(
    corpus: &ParallelCorpus,
    src_path: &Path,
    tgt_path: &Path,
    tag_path: Option<&Path>,
) -> Result<(), CorpusError> {
    write_lines(src_path, corpus.sources())?;
    write_lines(tgt_path, corpus.targets())?;
    if let Some(tags) = tag_path {
        write_lines(tags, corpus.pairs.iter().map(|p| p.origin.tag()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::new("ru", "tt", pairs.iter().map(|(s, t)| SentencePair::authentic(*s, *t)).collect()).unwrap()
    }

    #[test]
    fn dedup_keeps_first_occurrences_in_order() {
        let c = corpus(&[("a", "1"), ("b", "2"), ("a", "1"), ("c", "3"), ("b", "2")]);
        let d = deduplicate(&c);
        assert_eq!(d.len(), 3);
        assert_eq!(d.sources().collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(deduplicate(&d), d);
        // the same source with a different target is not a duplicate
        let c = corpus(&[("a", "1"), ("a", "2")]);
        assert_eq!(deduplicate(&c), c);
    }

    #[test]
    fn split_with_nothing_held_out_is_a_shuffle() {
        let c = corpus(&[("a", "1"), ("b", "2"), ("c", "3"), ("d", "4")]);
        let s = split(&c, SplitSpec { valid_size: 0, test_size: 0, seed: 3 }).unwrap();
        assert!(s.valid.is_empty() && s.test.is_empty());
        let mut got: Vec<_> = s.train.sources().collect();
        got.sort();
        assert_eq!(got, ["a", "b", "c", "d"]);
    }

    #[test]
    fn infeasible_split_is_a_config_error() {
        let c = corpus(&[("a", "1"), ("b", "2")]);
        assert!(matches!(split(&c, SplitSpec { valid_size: 1, test_size: 1, seed: 0 }), Err(CorpusError::Config(_))));
    }

    #[test]
    fn mix_rejects_language_mismatch_and_untagged_synthetic() {
        let p = corpus(&[("a", "1")]);
        let other = ParallelCorpus::new("kk", "tt", vec![SentencePair::synthetic("x", "y")]).unwrap();
        assert!(mix(&p, &other, None, 0).is_err());
        assert!(mix(&p, &p, None, 0).is_err());
    }

    #[test]
    fn mix_with_empty_synthetic_shuffles_parallel() {
        let p = corpus(&[("a", "1"), ("b", "2"), ("c", "3")]);
        let m = mix(&p, &ParallelCorpus::empty("ru", "tt"), Some(8.0), 1).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.count_origin(Origin::Authentic), 3);
    }

    #[test]
    fn length_filter_drops_long_and_unbalanced_pairs() {
        let c = corpus(&[("a b", "c d"), ("a b c d e", "f"), ("a", "b c d e f g h i j k")]);
        let (kept, dropped) = filter_by_length(&c, Some(5), Some(9.0));
        assert_eq!(dropped, 1);
        assert_eq!(kept.len(), 2);
    }
}
