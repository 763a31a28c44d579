//! Training loop, optimizer, checkpoints and transfer initialization.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::ParallelCorpus;
use crate::decoder::{translate_corpus, DecodeConfig, DecodeError, Translator};
use crate::eval::{corpus_bleu, BleuReport, CaseMode};
use crate::model::{init_params, lm_loss, translation_loss, Mode, ModelConfig, ModelError, ModelKind, ParamVars, Parameters};
use crate::tensor::{Graph, Tensor, TensorError};
use crate::tokenizer::{SubwordVocabulary, TokenId};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"LRNMT1";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("vocabulary fingerprint mismatch: checkpoint has {found:016x}, active vocabulary is {expected:016x}")]
    Fingerprint { expected: u64, found: u64 },
    #[error("transfer error: parent vocabulary {parent:016x} differs from child vocabulary {child:016x}; rebuild one shared vocabulary over all languages and retrain the parent")]
    Transfer { parent: u64, child: u64 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

/// `d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`
pub fn lr_at_step(step: u64, d_model: usize, warmup_steps: u64) -> Result<f64> {
    if step == 0 {
        return Err(TrainError::Usage("learning-rate schedule starts at step 1".into()));
    }
    if warmup_steps == 0 {
        return Err(TrainError::Config("warmup_steps must be at least 1".into()));
    }
    let s = step as f64;
    Ok((d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * (warmup_steps as f64).powf(-1.5)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// First and second moment estimates keyed by parameter path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
}

/// One bias-corrected Adam update of every parameter present in `grads`.
/// Parameters without a gradient are left alone, moments included.
pub fn adam_step(
    params: &mut Parameters,
    grads: &BTreeMap<String, Vec<f32>>,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
    for (name, g) in grads {
        let p = params.get_mut(name).ok_or_else(|| TrainError::Usage(format!("gradient for unknown parameter `{name}`")))?;
        if p.numel() != g.len() {
            return Err(TrainError::Usage(format!("gradient for `{name}` has {} values, parameter {}", g.len(), p.numel())));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for (((w, &gi), mi), vi) in p.values_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi as f64;
            let m_new = cfg.beta1 * *mi as f64 + (1.0 - cfg.beta1) * gi;
            let v_new = cfg.beta2 * *vi as f64 + (1.0 - cfg.beta2) * gi * gi;
            *mi = m_new as f32;
            *vi = v_new as f32;
            let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + cfg.eps);
            *w = (*w as f64 - update) as f32;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Upper bound on padded target tokens per batch.
    pub batch_tokens: usize,
    pub warmup_steps: u64,
    /// Multiplier on the scheduled learning rate.
    pub lr_scale: f64,
    pub label_smoothing: f64,
    pub seed: u64,
    pub freeze: Vec<String>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_tokens: 4096,
            warmup_steps: 4000,
            lr_scale: 1.0,
            label_smoothing: 0.1,
            seed: 1,
            freeze: Vec::new(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.warmup_steps == 0 {
            return Err(TrainError::Config("warmup_steps must be at least 1".into()));
        }
        if self.batch_tokens < model.max_len {
            return Err(TrainError::Config(format!(
                "batch_tokens {} is below max_len {}",
                self.batch_tokens, model.max_len
            )));
        }
        if !(self.lr_scale.is_finite() && self.lr_scale > 0.0) {
            return Err(TrainError::Config(format!("lr_scale {} must be positive", self.lr_scale)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(TrainError::Config(format!("label_smoothing {} outside [0, 1)", self.label_smoothing)));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(TrainError::Config(format!("invalid Adam settings {a:?}")));
        }
        self.freeze_patterns().map(|_| ())
    }

    pub fn freeze_patterns(&self) -> Result<Vec<glob::Pattern>> {
        self.freeze
            .iter()
            .map(|p| glob::Pattern::new(p).map_err(|e| TrainError::Config(format!("bad freeze glob `{p}`: {e}"))))
            .collect()
    }
}

/// Tokenized training examples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrainData {
    Parallel(Vec<(Vec<TokenId>, Vec<TokenId>)>),
    Mono(Vec<Vec<TokenId>>),
}

impl TrainData {
    /// Encodes a corpus, dropping pairs whose source or target does not fit
    /// in `max_len` once the boundary markers are added. Returns the data and
    /// the number of dropped pairs.
    pub fn from_parallel(corpus: &ParallelCorpus, vocab: &SubwordVocabulary, max_len: usize) -> (Self, usize) {
        let mut out = Vec::with_capacity(corpus.len());
        for p in corpus.pairs() {
            let (s, t) = (vocab.encode(&p.source), vocab.encode(&p.target));
            if s.len() < max_len && t.len() < max_len {
                out.push((s, t));
            }
        }
        let dropped = corpus.len() - out.len();
        if dropped > 0 {
            log::warn!("dropped {dropped} pairs longer than {} subwords", max_len - 1);
        }
        (TrainData::Parallel(out), dropped)
    }

    pub fn from_mono<S: AsRef<str>>(sentences: &[S], vocab: &SubwordVocabulary, max_len: usize) -> (Self, usize) {
        let out: Vec<Vec<TokenId>> =
            sentences.iter().map(|s| vocab.encode(s.as_ref())).filter(|t| t.len() < max_len).collect();
        let dropped = sentences.len() - out.len();
        if dropped > 0 {
            log::warn!("dropped {dropped} sentences longer than {} subwords", max_len - 1);
        }
        (TrainData::Mono(out), dropped)
    }

    pub fn len(&self) -> usize {
        match self {
            TrainData::Parallel(p) => p.len(),
            TrainData::Mono(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Decoder-side token count per example (end marker included).
    pub fn target_lengths(&self) -> Vec<usize> {
        match self {
            TrainData::Parallel(p) => p.iter().map(|(_, t)| t.len() + 1).collect(),
            TrainData::Mono(m) => m.iter().map(|t| t.len() + 1).collect(),
        }
    }

    fn source_lengths(&self) -> Option<Vec<usize>> {
        match self {
            TrainData::Parallel(p) => Some(p.iter().map(|(s, _)| s.len() + 1).collect()),
            TrainData::Mono(_) => None,
        }
    }
}

/// Groups example indices into batches of similar length whose padded
/// target size `count · longest` stays within `batch_tokens`. Source padding
/// obeys the same bound when `source_lengths` is given. Deterministic in
/// `seed`.
pub fn make_batches(
    target_lengths: &[usize],
    source_lengths: Option<&[usize]>,
    batch_tokens: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..target_lengths.len()).collect();
    order.shuffle(&mut rng);
    let key = |i: usize| (target_lengths[i], source_lengths.map_or(0, |s| s[i]));
    order.sort_by_key(|&i| key(i));
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let (mut max_t, mut max_s) = (0, 0);
    for i in order {
        let t = target_lengths[i].max(max_t);
        let s = source_lengths.map_or(0, |sl| sl[i]).max(max_s);
        let n = current.len() + 1;
        if !current.is_empty() && (n * t > batch_tokens || n * s > batch_tokens) {
            batches.push(std::mem::take(&mut current));
            max_t = target_lengths[i];
            max_s = source_lengths.map_or(0, |sl| sl[i]);
        } else {
            max_t = t;
            max_s = s;
        }
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches.shuffle(&mut rng);
    batches
}

fn mix_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 over the combined words
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Loss averaged over every non-pad target token of the epoch.
    pub mean_loss: f64,
    pub steps: usize,
    /// Learning rate used at the last step.
    pub last_lr: f64,
}

/// Serialized model, vocabulary binding and optional optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Parameters,
    pub fingerprint: u64,
    pub optimizer: Option<AdamState>,
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| TrainError::Format(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn string(&mut self, n: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| TrainError::Format(format!("{what} is not UTF-8")))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f32]) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len());
    for &d in shape {
        put_u32(out, d);
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    /// Binary encoding: magic, length-prefixed `key=value` config block,
    /// fingerprint, optimizer flag, then the tensor table.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut kv = self.config.to_pairs();
        if let Some(opt) = &self.optimizer {
            kv.push(("optimizer.step".into(), opt.step.to_string()));
        }
        kv.sort();
        let block: String = kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, block.len());
        out.extend_from_slice(block.as_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.push(self.optimizer.is_some() as u8);
        let mut count = self.params.len();
        if let Some(opt) = &self.optimizer {
            count += opt.m.len() + opt.v.len();
        }
        put_u32(&mut out, count);
        for (name, t) in self.params.iter() {
            put_tensor(&mut out, name, t.shape(), t.values());
        }
        if let Some(opt) = &self.optimizer {
            for (prefix, moments) in [("adam.m.", &opt.m), ("adam.v.", &opt.v)] {
                for (name, vals) in moments {
                    let shape = self.params.get(name).map_or_else(|| vec![vals.len()], |p| p.shape().to_vec());
                    put_tensor(&mut out, &format!("{prefix}{name}"), &shape, vals);
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len(), "magic").ok() != Some(&CHECKPOINT_MAGIC[..]) {
            return Err(TrainError::Format("bad magic".into()));
        }
        let block_len = r.u32("config length")? as usize;
        let block = r.string(block_len, "config block")?;
        let mut kv = BTreeMap::new();
        for line in block.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| TrainError::Format(format!("bad config line `{line}`")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let config = ModelConfig::from_pairs(&kv).map_err(|e| TrainError::Format(e.to_string()))?;
        let fingerprint = r.u64("fingerprint")?;
        let has_opt = match r.u8("optimizer flag")? {
            0 => false,
            1 => true,
            other => return Err(TrainError::Format(format!("bad optimizer flag {other}"))),
        };
        let count = r.u32("tensor count")? as usize;
        let mut tensors = BTreeMap::new();
        let mut opt = AdamState::default();
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = r.string(name_len, "tensor name")?;
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| TrainError::Format("tensor too large".into()))?, "tensor values")?;
            let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            if let Some(p) = name.strip_prefix("adam.m.").filter(|_| has_opt) {
                opt.m.insert(p.to_string(), values);
            } else if let Some(p) = name.strip_prefix("adam.v.").filter(|_| has_opt) {
                opt.v.insert(p.to_string(), values);
            } else {
                let t = Tensor::new(shape, values).map_err(|e| TrainError::Format(format!("`{name}`: {e}")))?;
                tensors.insert(name, t.requiring_grad());
            }
        }
        if r.pos != buf.len() {
            return Err(TrainError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        let params = Parameters::from_map(tensors);
        params.check_against(&config).map_err(|e| TrainError::Format(e.to_string()))?;
        let optimizer = if has_opt {
            opt.step = kv
                .get("optimizer.step")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| TrainError::Format("missing optimizer.step".into()))?;
            Some(opt)
        } else {
            None
        };
        Ok(Self { config, params, fingerprint, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(io_err(path))?)
    }

    /// Checks the checkpoint against the active vocabulary.
    pub fn bind_vocab(&self, vocab: &SubwordVocabulary, force: bool) -> Result<()> {
        if self.fingerprint != vocab.fingerprint() && !force {
            return Err(TrainError::Fingerprint { expected: vocab.fingerprint(), found: self.fingerprint });
        }
        if self.config.vocab_size != vocab.len() {
            return Err(TrainError::Config(format!(
                "checkpoint vocab_size {} but vocabulary has {} tokens",
                self.config.vocab_size,
                vocab.len()
            )));
        }
        Ok(())
    }
}

/// Mutable training state: parameters, optimizer and global step counter.
#[derive(Clone, Debug)]
pub struct TrainingSession {
    pub config: ModelConfig,
    pub params: Parameters,
    pub fingerprint: u64,
    pub optimizer: AdamState,
    pub tcfg: TrainConfig,
    frozen: Vec<String>,
}

impl TrainingSession {
    /// Fresh parameters initialized from `tcfg.seed`.
    pub fn new(config: ModelConfig, fingerprint: u64, tcfg: TrainConfig) -> Result<Self> {
        let params = init_params(&config, mix_seed(tcfg.seed, 0, 0))?;
        Self::from_params(config, params, fingerprint, AdamState::default(), tcfg)
    }

    pub fn from_params(
        config: ModelConfig,
        mut params: Parameters,
        fingerprint: u64,
        optimizer: AdamState,
        tcfg: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        tcfg.validate(&config)?;
        params.check_against(&config)?;
        let patterns = tcfg.freeze_patterns()?;
        let mut frozen = Vec::new();
        for (name, t) in params.iter_mut() {
            let freeze = patterns.iter().any(|p| p.matches(name));
            t.set_requires_grad(!freeze);
            if freeze {
                frozen.push(name.to_string());
            }
        }
        Ok(Self { config, params, fingerprint, optimizer, tcfg, frozen })
    }

    /// Continues training a checkpoint, optimizer state included.
    pub fn resume(ckpt: Checkpoint, tcfg: TrainConfig) -> Result<Self> {
        let opt = ckpt.optimizer.unwrap_or_default();
        Self::from_params(ckpt.config, ckpt.params, ckpt.fingerprint, opt, tcfg)
    }

    pub fn frozen(&self) -> &[String] {
        &self.frozen
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn checkpoint(&self, with_optimizer: bool) -> Checkpoint {
        let mut params = self.params.clone();
        params.set_requires_grad(true);
        Checkpoint {
            config: self.config.clone(),
            params,
            fingerprint: self.fingerprint,
            optimizer: with_optimizer.then(|| self.optimizer.clone()),
        }
    }

    pub fn translator(&self) -> Result<Translator<'_>> {
        Ok(Translator::new(&self.config, &self.params, self.fingerprint)?)
    }

    fn check_data(&self, data: &TrainData) -> Result<()> {
        match (self.config.kind, data) {
            (ModelKind::Translation, TrainData::Parallel(_)) | (ModelKind::LanguageModel, TrainData::Mono(_)) => {}
            _ => return Err(TrainError::Usage("training data does not match the model kind".into())),
        }
        if data.is_empty() {
            return Err(TrainError::Config("empty training corpus".into()));
        }
        Ok(())
    }

    /// One optimizer step per length-bucketed batch over the whole of
    /// `data`. Deterministic in the seed and `epoch_index`.
    pub fn train_epoch(&mut self, data: &TrainData, epoch_index: usize) -> Result<EpochStats> {
        self.check_data(data)?;
        let targets = data.target_lengths();
        let sources = data.source_lengths();
        let batches = make_batches(&targets, sources.as_deref(), self.tcfg.batch_tokens, mix_seed(self.tcfg.seed, 1, epoch_index as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.tcfg.seed, 2, epoch_index as u64));
        let (mut loss_sum, mut tokens) = (0.0f64, 0usize);
        let mut last_lr = 0.0;
        for batch in &batches {
            let n_tokens: usize = batch.iter().map(|&i| targets[i]).sum();
            let (loss, grads) = self.batch_gradients(data, batch, &mut rng)?;
            loss_sum += loss * n_tokens as f64;
            tokens += n_tokens;
            last_lr = self.tcfg.lr_scale * lr_at_step(self.optimizer.step + 1, self.config.d_model, self.tcfg.warmup_steps)?;
            adam_step(&mut self.params, &grads, &mut self.optimizer, last_lr, &self.tcfg.adam)?;
        }
        Ok(EpochStats { mean_loss: loss_sum / tokens.max(1) as f64, steps: batches.len(), last_lr })
    }

    fn batch_gradients(
        &self,
        data: &TrainData,
        batch: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, BTreeMap<String, Vec<f32>>)> {
        let mut g = Graph::new();
        let pv = ParamVars::bind(&mut g, &self.params);
        let mut mode = Mode::train(rng);
        let eps = self.tcfg.label_smoothing;
        let loss = match data {
            TrainData::Parallel(pairs) => {
                let src: Vec<&[TokenId]> = batch.iter().map(|&i| pairs[i].0.as_slice()).collect();
                let tgt: Vec<&[TokenId]> = batch.iter().map(|&i| pairs[i].1.as_slice()).collect();
                translation_loss(&mut g, &pv, &self.config, &src, &tgt, eps, &mut mode)?
            }
            TrainData::Mono(sents) => {
                let seqs: Vec<&[TokenId]> = batch.iter().map(|&i| sents[i].as_slice()).collect();
                lm_loss(&mut g, &pv, &self.config, &seqs, eps, &mut mode)?
            }
        };
        let value = g.value(loss)[0] as f64;
        let mut grads = g.backward(loss)?;
        let mut out = BTreeMap::new();
        for (name, var) in pv.iter() {
            if let Some(gv) = grads.take(var) {
                out.insert(name.to_string(), gv);
            }
        }
        Ok((value, out))
    }
}

/// Starts child training from the parent's weights exactly. Optimizer
/// state and the step counter start fresh; only `tcfg.freeze` is frozen.
pub fn transfer_init(parent: &Checkpoint, child_vocab: &SubwordVocabulary, tcfg: TrainConfig) -> Result<TrainingSession> {
    if parent.fingerprint != child_vocab.fingerprint() {
        return Err(TrainError::Transfer { parent: parent.fingerprint, child: child_vocab.fingerprint() });
    }
    if parent.config.kind != ModelKind::Translation {
        return Err(TrainError::Usage("transfer needs a translation checkpoint".into()));
    }
    TrainingSession::from_params(
        parent.config.clone(),
        parent.params.clone(),
        parent.fingerprint,
        AdamState::default(),
        tcfg,
    )
}

/// Decodes `sources` with the session's current parameters and scores them
/// against `references`. Failed sentences count as empty output.
pub fn validate_bleu<S: AsRef<str> + Sync, R: AsRef<str>>(
    model: &Translator<'_>,
    vocab: &SubwordVocabulary,
    sources: &[S],
    references: &[R],
    decode: &DecodeConfig,
    workers: usize,
    case_mode: CaseMode,
) -> Result<BleuReport> {
    let hyps: Vec<String> = translate_corpus(model, None, vocab, sources, decode, workers)?
        .into_iter()
        .map(|r| r.unwrap_or_default())
        .collect();
    corpus_bleu(&hyps, references, case_mode).map_err(|e| TrainError::Usage(e.to_string()))
}

/// One training-log line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_bleu: Option<f64>,
    pub wall_seconds: Option<f64>,
}

impl fmt::Display for EpochRecord {
    /// Tab-separated: epoch, mean loss, validation BLEU, wall seconds. Missing
    /// values print as `-`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:.6}\t", self.epoch, self.mean_loss)?;
        match self.valid_bleu {
            Some(b) => write!(f, "{b:.2}\t")?,
            None => write!(f, "-\t")?,
        }
        match self.wall_seconds {
            Some(s) => write!(f, "{s:.3}"),
            None => write!(f, "-"),
        }
    }
}
