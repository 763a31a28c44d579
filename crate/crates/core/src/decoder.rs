//! Greedy and beam-search decoding with optional language-model fusion.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{decoder_forward, encoder_forward, key_padding, source_batch, Memory, Mode, ModelConfig, ModelError, ModelKind, ParamVars, Parameters, TokenBatch};
use crate::tensor::{log_softmax, Graph, Tensor};
use crate::tokenizer::{SubwordVocabulary, TokenId, BOS, EOS, PAD};

/// Log-probability floor used for zero probabilities.
pub const LOG_FLOOR: f64 = -1e9;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("dimension mismatch: translation model has {tm} outputs, language model {lm}")]
    Dimension { tm: usize, lm: usize },
    #[error("fusion error: {0}")]
    Fusion(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    None,
    Shallow,
    PostNorm,
}

impl FromStr for FusionMode {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, DecodeError> {
        match s {
            "none" => Ok(FusionMode::None),
            "shallow" => Ok(FusionMode::Shallow),
            "postnorm" => Ok(FusionMode::PostNorm),
            other => Err(DecodeError::Usage(format!("unknown fusion mode `{other}`"))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::None => "none",
            FusionMode::Shallow => "shallow",
            FusionMode::PostNorm => "postnorm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PostNormKind {
    /// Softmax over the component-wise products.
    Softmax,
    /// Division of the products by their sum.
    Sum,
}

impl FromStr for PostNormKind {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, DecodeError> {
        match s {
            "softmax" => Ok(PostNormKind::Softmax),
            "sum" => Ok(PostNormKind::Sum),
            other => Err(DecodeError::Usage(format!("unknown postnorm normalization `{other}`"))),
        }
    }
}

impl fmt::Display for PostNormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PostNormKind::Softmax => "softmax",
            PostNormKind::Sum => "sum",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub weight: f64,
    pub postnorm_norm: PostNormKind,
}

impl FusionConfig {
    pub fn none() -> Self {
        Self { mode: FusionMode::None, weight: 0.0, postnorm_norm: PostNormKind::Softmax }
    }

    pub fn shallow(weight: f64) -> Self {
        Self { mode: FusionMode::Shallow, weight, ..Self::none() }
    }

    pub fn postnorm(norm: PostNormKind) -> Self {
        Self { mode: FusionMode::PostNorm, weight: 0.0, postnorm_norm: norm }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(DecodeError::Fusion(format!("weight {} must be a non-negative number", self.weight)));
        }
        Ok(())
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self::none()
    }
}

fn floored_ln(p: f64) -> f64 {
    if p > 0.0 { p.ln().max(LOG_FLOOR) } else { LOG_FLOOR }
}

/// Per-step log-scores over the vocabulary.
pub fn fuse_step_scores(tm_logits: &[f64], lm_logits: Option<&[f64]>, fcfg: &FusionConfig) -> Result<Vec<f64>, DecodeError> {
    fcfg.validate()?;
    let lm = match (fcfg.mode, lm_logits) {
        (FusionMode::None, None) => return Ok(log_softmax(tm_logits)),
        (FusionMode::None, Some(_)) => return Err(DecodeError::Fusion("language-model scores given without fusion".into())),
        (_, None) => return Err(DecodeError::Fusion(format!("{} fusion needs language-model scores", fcfg.mode))),
        (_, Some(lm)) => lm,
    };
    if lm.len() != tm_logits.len() {
        return Err(DecodeError::Dimension { tm: tm_logits.len(), lm: lm.len() });
    }
    let tm = log_softmax(tm_logits);
    let lm = log_softmax(lm);
    Ok(match fcfg.mode {
        FusionMode::Shallow => shallow_fusion(&tm, &lm, fcfg.weight),
        FusionMode::PostNorm => {
            let p_tm: Vec<f64> = tm.iter().map(|v| v.exp()).collect();
            let p_lm: Vec<f64> = lm.iter().map(|v| v.exp()).collect();
            postnorm_fusion(&p_tm, &p_lm, fcfg.postnorm_norm).unwrap_or(tm)
        }
        FusionMode::None => unreachable!(),
    })
}

/// `log p_TM + λ·log p_LM`, with the LM term floored at [`LOG_FLOOR`].
pub fn shallow_fusion(log_p_tm: &[f64], log_p_lm: &[f64], weight: f64) -> Vec<f64> {
    log_p_tm.iter().zip(log_p_lm).map(|(&t, &l)| t + weight * l.max(LOG_FLOOR)).collect()
}

/// Log of the renormalized component-wise product `p_TM ∘ p_LM`. `None` when
/// the product vanishes everywhere under sum normalization.
pub fn postnorm_fusion(p_tm: &[f64], p_lm: &[f64], norm: PostNormKind) -> Option<Vec<f64>> {
    let prod: Vec<f64> = p_tm.iter().zip(p_lm).map(|(&t, &l)| t * l).collect();
    match norm {
        PostNormKind::Softmax => Some(log_softmax(&prod)),
        PostNormKind::Sum => {
            let z: f64 = prod.iter().sum();
            (z > 0.0).then(|| prod.iter().map(|&p| floored_ln(p / z)).collect())
        }
    }
}

/// Source of next-token logits for batches of equal-length prefixes.
///
/// Every prefix starts with [`BOS`].
pub trait StepScorer: Sync {
    fn vocab_size(&self) -> usize;
    fn next_logits(&self, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>, DecodeError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    pub ids: Vec<TokenId>,
    pub log_score: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    /// Generated length, counting the end marker but not the start marker.
    pub fn len(&self) -> usize {
        self.ids.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn normalized_score(&self, alpha: f64) -> f64 {
        self.log_score / length_penalty(self.len(), alpha)
    }

    /// Generated tokens without start and end markers.
    pub fn output(&self) -> &[TokenId] {
        let body = &self.ids[1..];
        match body.last() {
            Some(&EOS) => &body[..body.len() - 1],
            _ => body,
        }
    }
}

/// `((5 + len) / 6)^α`
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Maximum generated tokens, end marker included.
    pub max_len: usize,
    pub length_penalty: f64,
    pub fusion: FusionConfig,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { beam_size: 4, max_len: 128, length_penalty: 0.6, fusion: FusionConfig::none() }
    }
}

impl DecodeConfig {
    pub fn greedy(max_len: usize) -> Self {
        Self { beam_size: 1, max_len, length_penalty: 0.0, fusion: FusionConfig::none() }
    }
}

fn step_scores(
    tm: &dyn StepScorer,
    lm: Option<&dyn StepScorer>,
    prefixes: &[Vec<TokenId>],
    fcfg: &FusionConfig,
) -> Result<Vec<Vec<f64>>, DecodeError> {
    let tm_logits = tm.next_logits(prefixes)?;
    let lm_logits = match (fcfg.mode, lm) {
        (FusionMode::None, _) => None,
        (_, Some(lm)) => Some(lm.next_logits(prefixes)?),
        (mode, None) => return Err(DecodeError::Fusion(format!("{mode} fusion needs a language model"))),
    };
    tm_logits
        .iter()
        .enumerate()
        .map(|(i, t)| fuse_step_scores(t, lm_logits.as_ref().map(|l| l[i].as_slice()), fcfg))
        .collect()
}

/// Tokens that may be generated: everything except padding and the start
/// marker.
fn emittable(token: usize) -> bool {
    token != PAD as usize && token != BOS as usize
}

/// Beam search over fused step scores.
///
/// Each step keeps the `beam_size` best extensions of the live beam; those
/// ending in [`EOS`] leave the beam as finished hypotheses. Ties are broken
/// towards the earlier hypothesis and the lower token id. Search stops once
/// no live hypothesis can still beat the best finished one, or after
/// `max_len` steps. The best finished hypothesis is returned if there is one,
/// otherwise the best unfinished.
pub fn beam_search(
    tm: &dyn StepScorer,
    lm: Option<&dyn StepScorer>,
    cfg: &DecodeConfig,
) -> Result<BeamHypothesis, DecodeError> {
    if cfg.beam_size == 0 || cfg.max_len == 0 {
        return Err(DecodeError::Usage("beam_size and max_len must be positive".into()));
    }
    if let Some(lm) = lm {
        if lm.vocab_size() != tm.vocab_size() {
            return Err(DecodeError::Dimension { tm: tm.vocab_size(), lm: lm.vocab_size() });
        }
    }
    let alpha = cfg.length_penalty;
    let mut live = vec![BeamHypothesis { ids: vec![BOS], log_score: 0.0, finished: false }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    for _ in 0..cfg.max_len {
        let prefixes: Vec<Vec<TokenId>> = live.iter().map(|h| h.ids.clone()).collect();
        let scores = step_scores(tm, lm, &prefixes, &cfg.fusion)?;
        let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(live.len() * tm.vocab_size());
        for (h, row) in scores.iter().enumerate() {
            for (tok, &s) in row.iter().enumerate() {
                if emittable(tok) {
                    cand.push((live[h].log_score + s, h, tok));
                }
            }
        }
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cand.truncate(cfg.beam_size);
        let mut next = Vec::with_capacity(cand.len());
        for (score, h, tok) in cand {
            let mut ids = live[h].ids.clone();
            ids.push(tok as TokenId);
            let hyp = BeamHypothesis { ids, log_score: score, finished: tok == EOS as usize };
            if hyp.finished {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        // Step scores are log-probabilities, so a live hypothesis can only
        // lose score; its normalized score is bounded by the largest
        // possible length penalty.
        if let Some(best) = best_of(&finished, alpha) {
            let bound = length_penalty(cfg.max_len, alpha).max(1.0);
            let live_best = live.iter().map(|h| h.log_score).fold(f64::NEG_INFINITY, f64::max);
            if best.normalized_score(alpha) >= live_best / bound {
                break;
            }
        }
    }
    best_of(&finished, alpha)
        .or_else(|| best_of(&live, alpha))
        .cloned()
        .ok_or_else(|| DecodeError::Usage("beam emptied without hypotheses".into()))
}

fn best_of(hyps: &[BeamHypothesis], alpha: f64) -> Option<&BeamHypothesis> {
    // first maximum wins, keeping the earlier-found hypothesis on ties
    hyps.iter().fold(None, |best: Option<&BeamHypothesis>, h| match best {
        Some(b) if b.normalized_score(alpha) >= h.normalized_score(alpha) => Some(b),
        _ => Some(h),
    })
}

/// Argmax per step until [`EOS`] or `max_len` tokens; ties go to the lowest
/// id.
pub fn greedy_decode(
    tm: &dyn StepScorer,
    lm: Option<&dyn StepScorer>,
    max_len: usize,
    fusion: &FusionConfig,
) -> Result<BeamHypothesis, DecodeError> {
    let mut hyp = BeamHypothesis { ids: vec![BOS], log_score: 0.0, finished: false };
    for _ in 0..max_len {
        let row = step_scores(tm, lm, std::slice::from_ref(&hyp.ids), fusion)?.remove(0);
        let (tok, s) = row
            .iter()
            .enumerate()
            .filter(|(t, _)| emittable(*t))
            .fold((usize::MAX, f64::NEG_INFINITY), |best, (t, &s)| if s > best.1 { (t, s) } else { best });
        hyp.ids.push(tok as TokenId);
        hyp.log_score += s;
        if tok == EOS as usize {
            hyp.finished = true;
            break;
        }
    }
    Ok(hyp)
}

/// Decodes with the greedy fast path when `beam_size == 1`.
pub fn decode(tm: &dyn StepScorer, lm: Option<&dyn StepScorer>, cfg: &DecodeConfig) -> Result<BeamHypothesis, DecodeError> {
    if cfg.beam_size == 1 {
        greedy_decode(tm, lm, cfg.max_len, &cfg.fusion)
    } else {
        beam_search(tm, lm, cfg)
    }
}

/// Fixed next-token distributions keyed by generated context, for oracle
/// tests.
///
/// File format, one `key = value` per line (`#` starts a comment):
///
/// ```text
/// vocab = <pad> <s> </s> a b
/// ^ = a:0.6 b:0.3 </s>:0.1
/// ^ a = a:0.1 b:0.7 </s>:0.2
/// default = </s>:1
/// ```
///
/// `^` stands for the start marker; tokens missing from a row get
/// probability zero. `default` applies to contexts without their own row.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalTable {
    tokens: Vec<String>,
    rows: HashMap<Vec<TokenId>, Vec<f64>>,
    default: Option<Vec<f64>>,
}

impl ConditionalTable {
    pub fn new(tokens: Vec<String>, rows: HashMap<Vec<TokenId>, Vec<f64>>, default: Option<Vec<f64>>) -> Result<Self, DecodeError> {
        if tokens.len() <= EOS as usize || tokens[BOS as usize] != "<s>" || tokens[EOS as usize] != "</s>" {
            return Err(DecodeError::Fixture("vocab must list <pad> <s> </s> first".into()));
        }
        for row in rows.values().chain(default.iter()) {
            if row.len() != tokens.len() {
                return Err(DecodeError::Fixture("row length differs from vocab".into()));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(DecodeError::Fixture(format!("row {row:?} is not a distribution")));
            }
        }
        Ok(Self { tokens, rows, default })
    }

    pub fn parse(text: &str) -> Result<Self, DecodeError> {
        let mut tokens: Option<Vec<String>> = None;
        let mut raw_rows = Vec::new();
        let mut raw_default = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| DecodeError::Fixture(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "vocab" => tokens = Some(value.split_whitespace().map(String::from).collect()),
                "default" => raw_default = Some(value.to_string()),
                _ => raw_rows.push((n + 1, key.to_string(), value.to_string())),
            }
        }
        let tokens = tokens.ok_or_else(|| DecodeError::Fixture("missing vocab line".into()))?;
        let id = |t: &str, line: usize| {
            tokens
                .iter()
                .position(|x| x == t)
                .map(|i| i as TokenId)
                .ok_or_else(|| DecodeError::Fixture(format!("line {line}: unknown token `{t}`")))
        };
        let row = |spec: &str, line: usize| -> Result<Vec<f64>, DecodeError> {
            let mut probs = vec![0.0; tokens.len()];
            for item in spec.split_whitespace() {
                let (t, p) = item
                    .rsplit_once(':')
                    .ok_or_else(|| DecodeError::Fixture(format!("line {line}: expected token:prob, got `{item}`")))?;
                probs[id(t, line)? as usize] = p
                    .parse()
                    .map_err(|_| DecodeError::Fixture(format!("line {line}: bad probability `{p}`")))?;
            }
            Ok(probs)
        };
        let mut rows = HashMap::new();
        for (line, key, value) in &raw_rows {
            let mut ctx = key.split_whitespace();
            if ctx.next() != Some("^") {
                return Err(DecodeError::Fixture(format!("line {line}: context must start with ^")));
            }
            let ctx: Vec<TokenId> = ctx.map(|t| id(t, *line)).collect::<Result<_, _>>()?;
            rows.insert(ctx, row(value, *line)?);
        }
        let default = raw_default.map(|d| row(&d, 0)).transpose()?;
        Self::new(tokens, rows, default)
    }

    pub fn load(path: &Path) -> Result<Self, DecodeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DecodeError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Probability row for a generated context (start marker excluded).
    pub fn probabilities(&self, context: &[TokenId]) -> Result<&[f64], DecodeError> {
        self.rows
            .get(context)
            .or(self.default.as_ref())
            .map(Vec::as_slice)
            .ok_or_else(|| DecodeError::Fixture(format!("no row for context {context:?}")))
    }
}

impl StepScorer for ConditionalTable {
    fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    fn next_logits(&self, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>, DecodeError> {
        prefixes
            .iter()
            .map(|p| Ok(self.probabilities(&p[1..])?.iter().map(|&q| floored_ln(q)).collect()))
            .collect()
    }
}

fn last_position_rows(g: &Graph<'_, f32>, logits: crate::tensor::Var, batch: usize, len: usize, vocab: usize) -> Vec<Vec<f64>> {
    let v = g.value(logits);
    (0..batch)
        .map(|b| v[(b * len + len - 1) * vocab..][..vocab].iter().map(|&x| x as f64).collect())
        .collect()
}

fn check_prefixes(prefixes: &[Vec<TokenId>]) -> Result<usize, DecodeError> {
    let len = prefixes.first().map(Vec::len).unwrap_or(0);
    if len == 0 || prefixes.iter().any(|p| p.len() != len) {
        return Err(DecodeError::Usage("prefixes must be non-empty and of equal length".into()));
    }
    Ok(len)
}

/// Read-only translation model with its vocabulary fingerprint.
#[derive(Clone, Copy)]
pub struct Translator<'m> {
    pub config: &'m ModelConfig,
    pub params: &'m Parameters,
    pub fingerprint: u64,
}

/// A [`Translator`] bound to one encoded source sentence.
pub struct SourceScorer<'m> {
    model: Translator<'m>,
    memory: Tensor,
    key_pad: Vec<bool>,
}

impl<'m> Translator<'m> {
    pub fn new(config: &'m ModelConfig, params: &'m Parameters, fingerprint: u64) -> Result<Self, DecodeError> {
        if config.kind != ModelKind::Translation {
            return Err(DecodeError::Usage("translation needs a translation model".into()));
        }
        Ok(Self { config, params, fingerprint })
    }

    pub fn encode_source(&self, src: &[TokenId]) -> Result<SourceScorer<'m>, DecodeError> {
        let batch = source_batch(&[src]);
        let mut g = Graph::inference();
        let pv = ParamVars::bind(&mut g, self.params);
        let mem = encoder_forward(&mut g, &pv, self.config, &batch, &mut Mode::eval())?;
        Ok(SourceScorer { model: *self, memory: g.to_tensor(mem), key_pad: key_padding(&batch) })
    }
}

impl StepScorer for SourceScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn next_logits(&self, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>, DecodeError> {
        let len = check_prefixes(prefixes)?;
        let k = prefixes.len();
        let (s, d) = (self.memory.shape()[1], self.memory.shape()[2]);
        let repeated = self.memory.values().repeat(k);
        let key_pad = self.key_pad.repeat(k);
        let mut g = Graph::inference();
        let pv = ParamVars::bind(&mut g, self.model.params);
        let mem = g.owned_input(Tensor::new(vec![k, s, d], repeated).map_err(ModelError::from)?);
        let memory = Memory { var: mem, batch: k, len: s, key_pad: &key_pad };
        let tgt = TokenBatch::from_sequences(prefixes);
        let logits = decoder_forward(&mut g, &pv, self.model.config, &tgt, Some(memory), &mut Mode::eval())?;
        Ok(last_position_rows(&g, logits, k, len, self.vocab_size()))
    }
}

/// Decoder-only language model used for fusion.
#[derive(Clone, Copy)]
pub struct LanguageModelScorer<'m> {
    pub config: &'m ModelConfig,
    pub params: &'m Parameters,
    pub fingerprint: u64,
}

impl<'m> LanguageModelScorer<'m> {
    pub fn new(config: &'m ModelConfig, params: &'m Parameters, fingerprint: u64) -> Result<Self, DecodeError> {
        if config.kind != ModelKind::LanguageModel {
            return Err(DecodeError::Usage("fusion needs a language-model checkpoint".into()));
        }
        Ok(Self { config, params, fingerprint })
    }
}

impl StepScorer for LanguageModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn next_logits(&self, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>, DecodeError> {
        let len = check_prefixes(prefixes)?;
        let mut g = Graph::inference();
        let pv = ParamVars::bind(&mut g, self.params);
        let tgt = TokenBatch::from_sequences(prefixes);
        let logits = decoder_forward(&mut g, &pv, self.config, &tgt, None, &mut Mode::eval())?;
        Ok(last_position_rows(&g, logits, prefixes.len(), len, self.vocab_size()))
    }
}

/// Translates one tokenized source sentence into token ids.
///
/// Output length is capped at `2·|src| + 10` tokens on top of `cfg.max_len`
/// and the model's own limit.
pub fn translate_ids(
    model: &Translator<'_>,
    lm: Option<&LanguageModelScorer<'_>>,
    src: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<Vec<TokenId>, DecodeError> {
    if let Some(lm) = lm {
        if lm.fingerprint != model.fingerprint {
            return Err(DecodeError::Fusion(format!(
                "language model vocabulary {:016x} differs from translation model {:016x}",
                lm.fingerprint, model.fingerprint
            )));
        }
    }
    if src.len() + 1 > model.config.max_len {
        return Err(ModelError::Length { len: src.len() + 1, max_len: model.config.max_len }.into());
    }
    let mut cfg = *cfg;
    cfg.max_len = cfg.max_len.min(2 * src.len() + 10).min(model.config.max_len - 1).max(1);
    if let Some(lm) = lm {
        cfg.max_len = cfg.max_len.min(lm.config.max_len - 1).max(1);
    }
    let scorer = model.encode_source(src)?;
    let hyp = decode(&scorer, lm.map(|l| l as &dyn StepScorer), &cfg)?;
    Ok(hyp.output().to_vec())
}

/// Order-preserving translation of many sentences on `workers` threads.
/// Failures are reported per sentence.
pub fn translate_corpus<S: AsRef<str> + Sync>(
    model: &Translator<'_>,
    lm: Option<&LanguageModelScorer<'_>>,
    vocab: &SubwordVocabulary,
    sentences: &[S],
    cfg: &DecodeConfig,
    workers: usize,
) -> Result<Vec<Result<String, DecodeError>>, DecodeError> {
    if vocab.fingerprint() != model.fingerprint {
        return Err(DecodeError::Fusion(format!(
            "vocabulary {:016x} differs from model {:016x}",
            vocab.fingerprint(),
            model.fingerprint
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| DecodeError::Usage(e.to_string()))?;
    let one = |s: &S| -> Result<String, DecodeError> {
        let src = vocab.encode(s.as_ref());
        let ids = translate_ids(model, lm, &src, cfg)?;
        vocab.decode(&ids).map_err(|e| DecodeError::Usage(e.to_string()))
    };
    Ok(pool.install(|| sentences.par_iter().map(one).collect()))
}
