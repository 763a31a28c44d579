//! Corpus-level BLEU with clipped n-gram precisions up to order 4.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("alignment error: {hyps} hypotheses but {refs} references")]
    Alignment { hyps: usize, refs: usize },
    #[error("n-gram order {0} outside 1..=4")]
    Order(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CaseMode {
    Sensitive,
    Insensitive,
}

impl fmt::Display for CaseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseMode::Sensitive => "sensitive",
            CaseMode::Insensitive => "insensitive",
        })
    }
}

/// Simple (one-to-one) Unicode lowercasing, character by character.
pub fn simple_lowercase(s: &str) -> String {
    s.chars().map(|c| c.to_lowercase().next().unwrap_or(c)).collect()
}

fn ngrams<S: AsRef<str>>(toks: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    for w in toks.windows(n) {
        *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    m
}

/// `(matched, total)` for n-grams of order `n`, matches clipped by the
/// reference count of each n-gram.
pub fn clipped_ngram_counts<S: AsRef<str>>(hyp: &[S], reference: &[S], n: usize) -> Result<(usize, usize), EvalError> {
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(EvalError::Order(n));
    }
    if hyp.len() < n {
        return Ok((0, 0));
    }
    let ref_counts = ngrams(reference, n);
    let matched = ngrams(hyp, n)
        .iter()
        .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum();
    Ok((matched, hyp.len() - n + 1))
}

pub fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len > ref_len {
        1.0
    } else if hyp_len == 0 {
        if ref_len == 0 { 1.0 } else { 0.0 }
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    /// `(matched, total)` per order 1..=4.
    pub counts: [(usize, usize); MAX_ORDER],
    pub bp: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub score: f64,
    pub case_mode: CaseMode,
}

impl BleuReport {
    pub fn precision(&self, order: usize) -> f64 {
        let (m, t) = self.counts[order - 1];
        if t == 0 { 0.0 } else { m as f64 / t as f64 }
    }

    pub fn precisions(&self) -> [f64; MAX_ORDER] {
        std::array::from_fn(|i| self.precision(i + 1))
    }
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.precisions();
        write!(
            f,
            "BLEU = {:.2} (p1/p2/p3/p4 = {:.4}/{:.4}/{:.4}/{:.4}, BP = {:.4}, hyp_len = {}, ref_len = {}, case = {})",
            self.score, p[0], p[1], p[2], p[3], self.bp, self.hyp_len, self.ref_len, self.case_mode
        )
    }
}

pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    case_mode: CaseMode,
) -> Result<BleuReport, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::Alignment { hyps: hyps.len(), refs: refs.len() });
    }
    let prep = |s: &str| match case_mode {
        CaseMode::Sensitive => s.to_string(),
        CaseMode::Insensitive => simple_lowercase(s),
    };
    let mut counts = [(0usize, 0usize); MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (prep(h.as_ref()), prep(r.as_ref()));
        let ht: Vec<&str> = h.split_whitespace().collect();
        let rt: Vec<&str> = r.split_whitespace().collect();
        hyp_len += ht.len();
        ref_len += rt.len();
        for (n, slot) in counts.iter_mut().enumerate() {
            let (m, t) = clipped_ngram_counts(&ht, &rt, n + 1)?;
            slot.0 += m;
            slot.1 += t;
        }
    }
    let bp = brevity_penalty(hyp_len, ref_len);
    // Orders for which the hypotheses contain no n-grams at all are left
    // out of the geometric mean.
    let present: Vec<(usize, usize)> = counts.iter().copied().filter(|&(_, t)| t > 0).collect();
    let score = if present.is_empty() || present.iter().any(|&(m, _)| m == 0) {
        0.0
    } else {
        let log_mean = present.iter().map(|&(m, t)| (m as f64 / t as f64).ln()).sum::<f64>() / present.len() as f64;
        100.0 * bp * log_mean.exp()
    };
    Ok(BleuReport { counts, bp, hyp_len, ref_len, score, case_mode })
}
