//! Experiment configuration, command implementations and the end-to-end
//! recipes (baseline, transfer, back-translation).

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    self, apply_origin_tags, deduplicate, load_parallel, mix, split, write_corpus, CorpusError, Origin, ParallelCorpus,
    SentencePair, SplitSpec,
};
use crate::decoder::{
    translate_corpus, DecodeConfig, DecodeError, FusionConfig, FusionMode, LanguageModelScorer, PostNormKind, Translator,
};
use crate::eval::{corpus_bleu, BleuReport, CaseMode, EvalError};
use crate::lm::{perplexity, train_lm, MonoCorpus};
use crate::model::{ModelConfig, ModelKind};
use crate::tokenizer::{learn_merges, SubwordVocabulary, TokenizerError};
use crate::trainer::{
    transfer_init, validate_bleu, AdamConfig, Checkpoint, EpochRecord, TrainConfig, TrainData, TrainError,
    TrainingSession,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<PipelineError> },
}

impl PipelineError {
    /// 1 for configuration problems, 2 for data problems, 3 for training or
    /// decoding failures.
    pub fn exit_code(&self) -> i32 {
        use PipelineError as P;
        match self {
            P::Config(_) => 1,
            P::Corpus(CorpusError::Config(_)) => 1,
            P::Corpus(_) | P::Io { .. } | P::Eval(_) => 2,
            P::Tokenizer(TokenizerError::VocabTooSmall { .. }) => 1,
            P::Tokenizer(_) => 2,
            P::Train(TrainError::Config(_) | TrainError::Fingerprint { .. } | TrainError::Transfer { .. }) => 1,
            P::Train(TrainError::Io { .. } | TrainError::Format(_)) => 2,
            P::Train(_) => 3,
            P::Decode(DecodeError::Fusion(_)) => 1,
            P::Decode(DecodeError::Io { .. }) => 2,
            P::Decode(_) => 3,
            P::Stage { source, .. } => source.exit_code(),
        }
    }

    pub fn stage(&self) -> Option<&str> {
        match self {
            PipelineError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn in_stage<T>(stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log::info!("stage {stage}");
    f().map_err(|e| PipelineError::Stage { stage: stage.to_string(), source: Box::new(e) })
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = OsString::from(stem.as_os_str());
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// `<stem>.merges` and `<stem>.tokens`.
pub fn vocab_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (with_ext(stem, "merges"), with_ext(stem, "tokens"))
}

pub fn load_vocab(stem: &Path) -> Result<SubwordVocabulary> {
    let (m, t) = vocab_paths(stem);
    Ok(SubwordVocabulary::load(&m, &t)?)
}

pub fn save_vocab(vocab: &SubwordVocabulary, stem: &Path) -> Result<()> {
    let (m, t) = vocab_paths(stem);
    Ok(vocab.save(&m, &t)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Experiment configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub src_lang: String,
    pub tgt_lang: String,
    pub train_src: PathBuf,
    pub train_tgt: PathBuf,
    pub valid_src: PathBuf,
    pub valid_tgt: PathBuf,
    pub test_src: PathBuf,
    pub test_tgt: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    pub size: usize,
    /// Stem of an existing vocabulary; learned from the training text when
    /// absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for VocabSection {
    fn default() -> Self {
        Self { size: 8000, path: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub profile: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_model: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ffn_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub share_embeddings: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tie_softmax: Option<bool>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            profile: "desk".into(),
            n_layers: None,
            d_model: None,
            n_heads: None,
            ffn_dim: None,
            dropout: None,
            max_len: None,
            share_embeddings: None,
            tie_softmax: None,
        }
    }
}

impl ModelSection {
    pub fn build(&self, vocab_size: usize, kind: ModelKind) -> std::result::Result<ModelConfig, PipelineError> {
        let base = ModelConfig::profile(&self.profile, vocab_size, kind).map_err(|e| PipelineError::Config(e.to_string()))?;
        let cfg = ModelConfig {
            n_layers: self.n_layers.unwrap_or(base.n_layers),
            d_model: self.d_model.unwrap_or(base.d_model),
            n_heads: self.n_heads.unwrap_or(base.n_heads),
            ffn_dim: self.ffn_dim.unwrap_or(base.ffn_dim),
            dropout: self.dropout.unwrap_or(base.dropout),
            max_len: self.max_len.unwrap_or(base.max_len),
            share_embeddings: self.share_embeddings.unwrap_or(base.share_embeddings),
            tie_softmax: self.tie_softmax.unwrap_or(base.tie_softmax),
            ..base
        };
        cfg.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_tokens: usize,
    pub warmup_steps: u64,
    pub lr_scale: f64,
    pub label_smoothing: f64,
    pub seed: u64,
    /// Applied to the final model of a recipe only; parent and reverse
    /// models always train every parameter.
    pub freeze: Vec<String>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub validate: bool,
    /// Also decode the test set after every epoch of the final stage.
    pub track_test: bool,
    /// Wall seconds in the training log. Off by default so that logs are
    /// byte-reproducible.
    pub log_wall_time: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_tokens: t.batch_tokens,
            warmup_steps: t.warmup_steps,
            lr_scale: t.lr_scale,
            label_smoothing: t.label_smoothing,
            seed: t.seed,
            freeze: Vec::new(),
            adam_beta1: t.adam.beta1,
            adam_beta2: t.adam.beta2,
            adam_eps: t.adam.eps,
            validate: true,
            track_test: false,
            log_wall_time: false,
        }
    }
}

impl TrainSection {
    pub fn build(&self, epochs: usize, freeze: bool) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_tokens: self.batch_tokens,
            warmup_steps: self.warmup_steps,
            lr_scale: self.lr_scale,
            label_smoothing: self.label_smoothing,
            seed: self.seed,
            freeze: if freeze { self.freeze.clone() } else { Vec::new() },
            adam: AdamConfig { beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub beam_size: usize,
    pub max_len: usize,
    pub length_penalty: f64,
    /// `greedy` or `beam`, for per-epoch validation.
    pub validation: String,
    pub workers: usize,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let d = DecodeConfig::default();
        Self {
            beam_size: d.beam_size,
            max_len: d.max_len,
            length_penalty: d.length_penalty,
            validation: "greedy".into(),
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub mode: String,
    pub weight: f64,
    pub postnorm_norm: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lm_checkpoint: Option<PathBuf>,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self { mode: "none".into(), weight: 0.003, postnorm_norm: "softmax".into(), lm_checkpoint: None }
    }
}

impl FusionSection {
    pub fn build(&self) -> Result<FusionConfig> {
        let mode = FusionMode::from_str(&self.mode).map_err(|e| PipelineError::Config(e.to_string()))?;
        let postnorm_norm = PostNormKind::from_str(&self.postnorm_norm).map_err(|e| PipelineError::Config(e.to_string()))?;
        let f = FusionConfig { mode, weight: self.weight, postnorm_norm };
        f.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub parent_src_lang: String,
    pub parent_tgt_lang: String,
    pub parent_train_src: PathBuf,
    pub parent_train_tgt: PathBuf,
    #[serde(default = "one")]
    pub parent_epochs: usize,
}

fn one() -> usize {
    1
}

fn eight() -> f64 {
    8.0
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktranslationSection {
    /// Target-language monolingual text.
    pub mono: PathBuf,
    /// Maximum synthetic-to-authentic ratio of the mixed corpus.
    #[serde(default = "eight")]
    pub ratio: f64,
    /// Existing target-to-source model; trained from the reversed parallel
    /// data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse_checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse_epochs: Option<usize>,
    #[serde(default = "default_seed")]
    pub mix_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    #[serde(default)]
    pub vocab: VocabSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub decode: DecodeSection,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<TransferSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backtranslation: Option<BacktranslationSection>,
}

impl ExperimentConfig {
    /// Parses `path`, resolves relative paths against its directory and
    /// validates the result.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        let d = &mut self.data;
        let mut out = vec![
            &mut d.train_src,
            &mut d.train_tgt,
            &mut d.valid_src,
            &mut d.valid_tgt,
            &mut d.test_src,
            &mut d.test_tgt,
            &mut d.out_dir,
        ];
        out.extend(self.vocab.path.as_mut());
        out.extend(self.fusion.lm_checkpoint.as_mut());
        if let Some(t) = &mut self.transfer {
            out.push(&mut t.parent_train_src);
            out.push(&mut t.parent_train_tgt);
        }
        if let Some(b) = &mut self.backtranslation {
            out.push(&mut b.mono);
            out.extend(b.reverse_checkpoint.as_mut());
        }
        out
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in self.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Input files that must exist.
    fn inputs(&self) -> Vec<PathBuf> {
        let d = &self.data;
        let mut out = vec![
            d.train_src.clone(),
            d.train_tgt.clone(),
            d.valid_src.clone(),
            d.valid_tgt.clone(),
            d.test_src.clone(),
            d.test_tgt.clone(),
        ];
        if let Some(stem) = &self.vocab.path {
            let (m, t) = vocab_paths(stem);
            out.extend([m, t]);
        }
        out.extend(self.fusion.lm_checkpoint.clone());
        if let Some(t) = &self.transfer {
            out.extend([t.parent_train_src.clone(), t.parent_train_tgt.clone()]);
        }
        if let Some(b) = &self.backtranslation {
            out.push(b.mono.clone());
            out.extend(b.reverse_checkpoint.clone());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for p in self.inputs() {
            if !p.is_file() {
                return Err(PipelineError::Config(format!("{} does not exist", p.display())));
            }
        }
        let model = self.model.build(self.vocab.size.max(8), ModelKind::Translation)?;
        self.train.build(self.train.epochs, true).validate(&model).map_err(|e| PipelineError::Config(e.to_string()))?;
        let fusion = self.fusion.build()?;
        if fusion.mode != FusionMode::None && self.fusion.lm_checkpoint.is_none() {
            return Err(PipelineError::Config(format!("fusion mode {} needs fusion.lm_checkpoint", fusion.mode)));
        }
        if !matches!(self.decode.validation.as_str(), "greedy" | "beam") {
            return Err(PipelineError::Config(format!(
                "decode.validation must be greedy or beam, not `{}`",
                self.decode.validation
            )));
        }
        if self.decode.beam_size == 0 || self.decode.max_len == 0 {
            return Err(PipelineError::Config("decode.beam_size and decode.max_len must be positive".into()));
        }
        if let Some(b) = &self.backtranslation {
            if !(b.ratio.is_finite() && b.ratio >= 0.0) {
                return Err(PipelineError::Config(format!("backtranslation.ratio {} must be non-negative", b.ratio)));
            }
        }
        if self.train.epochs == 0 {
            return Err(PipelineError::Config("train.epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// Decoding for test reports and translation, fusion included.
    pub fn decode_config(&self) -> Result<DecodeConfig> {
        Ok(DecodeConfig {
            beam_size: self.decode.beam_size,
            max_len: self.decode.max_len,
            length_penalty: self.decode.length_penalty,
            fusion: self.fusion.build()?,
        })
    }

    /// Decoding for per-epoch validation. Never fused.
    pub fn validation_decode(&self) -> DecodeConfig {
        match self.decode.validation.as_str() {
            "beam" => DecodeConfig {
                beam_size: self.decode.beam_size,
                max_len: self.decode.max_len,
                length_penalty: self.decode.length_penalty,
                fusion: FusionConfig::none(),
            },
            _ => DecodeConfig::greedy(self.decode.max_len),
        }
    }
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrepArgs {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub src_lang: String,
    pub tgt_lang: String,
    pub valid_size: usize,
    pub test_size: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrepReport {
    pub read: usize,
    pub dropped_empty: usize,
    pub duplicates: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl fmt::Display for PrepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "read {} pairs, dropped {} with an empty side, removed {} duplicates\ntrain {}\nvalid {}\ntest {}",
            self.read, self.dropped_empty, self.duplicates, self.train, self.valid, self.test
        )
    }
}

/// Split file for one side, `<out_dir>/<split>.<lang>`.
pub fn split_path(out_dir: &Path, split: &str, lang: &str) -> PathBuf {
    out_dir.join(format!("{split}.{lang}"))
}

pub fn cmd_prep(args: &PrepArgs) -> Result<PrepReport> {
    let (corpus, stats) = load_parallel(&args.src, &args.tgt, &args.src_lang, &args.tgt_lang)?;
    let unique = deduplicate(&corpus);
    let splits = split(&unique, SplitSpec { valid_size: args.valid_size, test_size: args.test_size, seed: args.seed })?;
    create_dir(&args.out_dir)?;
    for (name, c) in [("train", &splits.train), ("valid", &splits.valid), ("test", &splits.test)] {
        write_corpus(
            c,
            &split_path(&args.out_dir, name, &args.src_lang),
            &split_path(&args.out_dir, name, &args.tgt_lang),
            None,
        )?;
    }
    Ok(PrepReport {
        read: stats.read,
        dropped_empty: stats.dropped_empty,
        duplicates: corpus.len() - unique.len(),
        train: splits.train.len(),
        valid: splits.valid.len(),
        test: splits.test.len(),
    })
}

fn read_text_lines(path: &Path) -> Result<Vec<String>> {
    Ok(corpus::read_lines(path)?)
}

pub fn cmd_bpe_learn(inputs: &[PathBuf], vocab_size: usize, stem: &Path) -> Result<SubwordVocabulary> {
    let mut text = Vec::new();
    for p in inputs {
        text.extend(read_text_lines(p)?);
    }
    let vocab = learn_merges(&text, vocab_size)?;
    save_vocab(&vocab, stem)?;
    Ok(vocab)
}

/// Writes each input line as space-separated subword tokens. Returns the
/// number of lines.
pub fn cmd_bpe_apply(stem: &Path, input: &Path, output: &Path) -> Result<usize> {
    let vocab = load_vocab(stem)?;
    let lines = read_text_lines(input)?;
    let mut out = String::new();
    for line in &lines {
        let toks: Vec<String> = line.split_whitespace().flat_map(|w| vocab.segment(w)).collect();
        out.push_str(&toks.join(" "));
        out.push('\n');
    }
    write_text(output, &out)?;
    Ok(lines.len())
}

/// Loads a checkpoint and checks it against the vocabulary.
pub fn load_model(ckpt: &Path, vocab: &SubwordVocabulary, force: bool) -> Result<Checkpoint> {
    let c = Checkpoint::load(ckpt)?;
    c.bind_vocab(vocab, force)?;
    Ok(c)
}

fn lm_scorer<'m>(lm: Option<&'m Checkpoint>, model_fingerprint: u64) -> Result<Option<LanguageModelScorer<'m>>> {
    let Some(lm) = lm else { return Ok(None) };
    if lm.fingerprint != model_fingerprint {
        return Err(DecodeError::Fusion(format!(
            "language model vocabulary {:016x} differs from translation model {:016x}",
            lm.fingerprint, model_fingerprint
        ))
        .into());
    }
    Ok(Some(LanguageModelScorer::new(&lm.config, &lm.params, lm.fingerprint)?))
}

/// Translates `sentences`; failed sentences come back empty and are counted.
pub fn translate_sentences<S: AsRef<str> + Sync>(
    model: &Checkpoint,
    lm: Option<&Checkpoint>,
    vocab: &SubwordVocabulary,
    sentences: &[S],
    decode: &DecodeConfig,
    workers: usize,
) -> Result<(Vec<String>, usize)> {
    let tm = Translator::new(&model.config, &model.params, model.fingerprint)?;
    let lm = lm_scorer(lm, model.fingerprint)?;
    if decode.fusion.mode != FusionMode::None && lm.is_none() {
        return Err(DecodeError::Fusion(format!("fusion mode {} needs a language model", decode.fusion.mode)).into());
    }
    let lm = if decode.fusion.mode == FusionMode::None { None } else { lm };
    let results = translate_corpus(&tm, lm.as_ref(), vocab, sentences, decode, workers)?;
    let mut failed = 0;
    let out = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.unwrap_or_else(|e| {
                log::warn!("sentence {}: {e}", i + 1);
                failed += 1;
                String::new()
            })
        })
        .collect();
    Ok((out, failed))
}

#[derive(Clone, Debug)]
pub struct TranslateArgs {
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub input: PathBuf,
    pub output: PathBuf,
    pub decode: DecodeConfig,
    pub lm: Option<PathBuf>,
    pub workers: usize,
    pub force: bool,
}

/// Returns the number of sentences that failed to decode.
pub fn cmd_translate(args: &TranslateArgs) -> Result<usize> {
    let vocab = load_vocab(&args.vocab)?;
    let model = load_model(&args.checkpoint, &vocab, args.force)?;
    let lm = args.lm.as_deref().map(|p| load_model(p, &vocab, args.force)).transpose()?;
    let input = read_text_lines(&args.input)?;
    let (out, failed) = translate_sentences(&model, lm.as_ref(), &vocab, &input, &args.decode, args.workers)?;
    let mut text = out.join("\n");
    if !out.is_empty() {
        text.push('\n');
    }
    write_text(&args.output, &text)?;
    Ok(failed)
}

/// Pairs every monolingual target sentence with its machine translation as
/// source, tagged synthetic. Sentences whose translation fails or comes out
/// empty are skipped; their count is returned alongside.
pub fn backtranslate(
    reverse: &Checkpoint,
    vocab: &SubwordVocabulary,
    mono: &MonoCorpus,
    src_lang: &str,
    decode: &DecodeConfig,
    workers: usize,
) -> Result<(ParallelCorpus, usize)> {
    let (hyps, _) = translate_sentences(reverse, None, vocab, mono.sentences(), decode, workers)?;
    let pairs: Vec<SentencePair> = hyps
        .into_iter()
        .zip(mono.sentences())
        .filter(|(h, _)| !h.is_empty())
        .map(|(h, t)| SentencePair::synthetic(h, t.as_str()))
        .collect();
    let skipped = mono.len() - pairs.len();
    if skipped > 0 {
        log::warn!("{skipped} monolingual sentences produced no back-translation");
    }
    Ok((ParallelCorpus::new(src_lang, mono.lang.clone(), pairs)?, skipped))
}

/// `<stem>.src`, `<stem>.tgt` and `<stem>.tags`.
pub fn corpus_paths(stem: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (with_ext(stem, "src"), with_ext(stem, "tgt"), with_ext(stem, "tags"))
}

fn write_tagged(corpus: &ParallelCorpus, stem: &Path) -> Result<()> {
    let (s, t, g) = corpus_paths(stem);
    Ok(write_corpus(corpus, &s, &t, Some(&g))?)
}

#[derive(Clone, Debug)]
pub struct BacktranslateArgs {
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub mono: PathBuf,
    pub out_dir: PathBuf,
    pub decode: DecodeConfig,
    pub workers: usize,
    pub force: bool,
}

/// Writes `<out_dir>/synthetic.{src,tgt,tags}`.
pub fn cmd_backtranslate(args: &BacktranslateArgs) -> Result<ParallelCorpus> {
    let vocab = load_vocab(&args.vocab)?;
    let model = load_model(&args.checkpoint, &vocab, args.force)?;
    if model.config.kind != ModelKind::Translation {
        return Err(PipelineError::Config("back-translation needs a translation checkpoint".into()));
    }
    let mono = MonoCorpus::load(&args.mono, "tgt")?;
    create_dir(&args.out_dir)?;
    let (synthetic, _) = backtranslate(&model, &vocab, &mono, "src", &args.decode, args.workers)?;
    write_tagged(&synthetic, &args.out_dir.join("synthetic"))?;
    Ok(synthetic)
}

#[derive(Clone, Debug)]
pub struct MixArgs {
    pub parallel_src: PathBuf,
    pub parallel_tgt: PathBuf,
    pub synthetic_src: PathBuf,
    pub synthetic_tgt: PathBuf,
    /// Origin tags of the synthetic side; every pair counts as synthetic
    /// when absent.
    pub synthetic_tags: Option<PathBuf>,
    pub ratio: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
}

/// Writes `<out>.{src,tgt,tags}` and returns the mixed corpus.
pub fn cmd_mix(args: &MixArgs) -> Result<ParallelCorpus> {
    let (parallel, _) = load_parallel(&args.parallel_src, &args.parallel_tgt, "src", "tgt")?;
    let (synthetic, _) = load_parallel(&args.synthetic_src, &args.synthetic_tgt, "src", "tgt")?;
    let synthetic = match &args.synthetic_tags {
        Some(tags) => apply_origin_tags(synthetic, tags)?,
        None => ParallelCorpus::new(
            "src",
            "tgt",
            synthetic.into_pairs().into_iter().map(|p| SentencePair { origin: Origin::Synthetic, ..p }).collect(),
        )?,
    };
    let mixed = mix(&parallel, &synthetic, args.ratio, args.seed)?;
    write_tagged(&mixed, &args.out)?;
    Ok(mixed)
}

pub fn cmd_bleu(hyp: &Path, reference: &Path, modes: &[CaseMode]) -> Result<Vec<BleuReport>> {
    let h = fs::read_to_string(hyp).map_err(io_err(hyp))?;
    let r = fs::read_to_string(reference).map_err(io_err(reference))?;
    let h: Vec<&str> = h.lines().collect();
    let r: Vec<&str> = r.lines().collect();
    modes.iter().map(|&m| Ok(corpus_bleu(&h, &r, m)?)).collect()
}

#[derive(Clone, Debug)]
pub struct LmTrainArgs {
    pub vocab: PathBuf,
    pub mono: PathBuf,
    pub out: PathBuf,
    pub model: ModelSection,
    pub train: TrainSection,
    /// Translation checkpoint the LM must share a vocabulary with.
    pub shared_with: Option<PathBuf>,
}

/// Trains and saves a language model. The log at `<out>.log` has one line
/// per epoch: epoch, mean loss, training perplexity.
pub fn cmd_lm_train(args: &LmTrainArgs) -> Result<Checkpoint> {
    let vocab = load_vocab(&args.vocab)?;
    let shared = match &args.shared_with {
        Some(p) => Some(Checkpoint::load(p)?.fingerprint),
        None => None,
    };
    let mono = MonoCorpus::load(&args.mono, "lm")?;
    let cfg = args.model.build(vocab.len(), ModelKind::LanguageModel)?;
    let tcfg = args.train.build(args.train.epochs, true);
    let mut log = String::new();
    let ckpt = train_lm(&mono, cfg, tcfg, &vocab, shared, |e, s, st| {
        let ppl = perplexity(&s.config, &s.params, &vocab, &mono)?;
        log.push_str(&format!("{}\t{:.6}\t{ppl:.4}\n", e + 1, st.mean_loss));
        Ok(())
    })?;
    ckpt.save(&args.out)?;
    write_text(&with_ext(&args.out, "log"), &log)?;
    Ok(ckpt)
}

// ---------------------------------------------------------------------------
// Recipes

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recipe {
    Baseline,
    Transfer,
    Backtranslation,
}

impl FromStr for Recipe {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Recipe::Baseline),
            "transfer" => Ok(Recipe::Transfer),
            "backtranslation" => Ok(Recipe::Backtranslation),
            other => Err(PipelineError::Config(format!("unknown recipe `{other}`"))),
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Recipe::Baseline => "baseline",
            Recipe::Transfer => "transfer",
            Recipe::Backtranslation => "backtranslation",
        })
    }
}

/// What one training stage produced.
#[derive(Clone, Debug)]
pub struct StageSummary {
    pub name: String,
    pub records: Vec<EpochRecord>,
    /// Insensitive test BLEU per epoch, when tracked.
    pub test_bleu: Vec<f64>,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RecipeReport {
    pub recipe: Recipe,
    pub out_dir: PathBuf,
    pub stages: Vec<StageSummary>,
    /// Insensitive then sensitive.
    pub test: [BleuReport; 2],
    /// Authentic and synthetic pair counts of the mixed corpus.
    pub mixed: Option<(usize, usize)>,
}

struct Eval<'a> {
    valid: Option<&'a ParallelCorpus>,
    test: Option<&'a ParallelCorpus>,
}

fn corpus_bleu_of(
    session: &TrainingSession,
    vocab: &SubwordVocabulary,
    c: &ParallelCorpus,
    decode: &DecodeConfig,
    workers: usize,
) -> Result<f64> {
    let src: Vec<&str> = c.sources().collect();
    let tgt: Vec<&str> = c.targets().collect();
    Ok(validate_bleu(&session.translator()?, vocab, &src, &tgt, decode, workers, CaseMode::Insensitive)?.score)
}

/// Trains `session` for `epochs` epochs and writes `train.log`, `test.log`
/// (when tracked), `final.ckpt` and `best.ckpt` under `dir`.
#[allow(clippy::too_many_arguments)]
fn train_stage(
    name: &str,
    dir: &Path,
    cfg: &ExperimentConfig,
    vocab: &SubwordVocabulary,
    mut session: TrainingSession,
    train: &ParallelCorpus,
    eval: Eval<'_>,
    epochs: usize,
) -> Result<(StageSummary, TrainingSession)> {
    create_dir(dir)?;
    let (data, dropped) = TrainData::from_parallel(train, vocab, session.config.max_len);
    if dropped > 0 {
        log::warn!("{name}: {dropped} pairs exceed the model length limit");
    }
    let decode = cfg.validation_decode();
    let workers = cfg.decode.workers;
    let (mut log, mut test_log) = (String::new(), String::new());
    let mut records = Vec::new();
    let mut test_bleu = Vec::new();
    let mut best: Option<f64> = None;
    let best_path = dir.join("best.ckpt");
    for e in 0..epochs {
        let start = Instant::now();
        let stats = session.train_epoch(&data, e)?;
        let valid_bleu = match eval.valid {
            Some(v) if cfg.train.validate => Some(corpus_bleu_of(&session, vocab, v, &decode, workers)?),
            _ => None,
        };
        if let Some(t) = eval.test.filter(|_| cfg.train.track_test) {
            let b = corpus_bleu_of(&session, vocab, t, &decode, workers)?;
            test_log.push_str(&format!("{}\t{b:.2}\n", e + 1));
            test_bleu.push(b);
        }
        let wall = cfg.train.log_wall_time.then(|| start.elapsed().as_secs_f64());
        let rec = EpochRecord { epoch: e + 1, mean_loss: stats.mean_loss, valid_bleu, wall_seconds: wall };
        log::info!("{name} {rec}");
        log.push_str(&format!("{rec}\n"));
        records.push(rec);
        if let Some(b) = valid_bleu {
            if best.is_none_or(|x| b > x) {
                best = Some(b);
                session.checkpoint(false).save(&best_path)?;
            }
        }
    }
    write_text(&dir.join("train.log"), &log)?;
    if !test_log.is_empty() {
        write_text(&dir.join("test.log"), &test_log)?;
    }
    let final_path = dir.join("final.ckpt");
    session.checkpoint(true).save(&final_path)?;
    let summary = StageSummary {
        name: name.to_string(),
        records,
        test_bleu,
        final_checkpoint: final_path,
        best_checkpoint: best.map(|_| best_path),
    };
    Ok((summary, session))
}

fn load_split(src: &Path, tgt: &Path, src_lang: &str, tgt_lang: &str) -> Result<ParallelCorpus> {
    Ok(load_parallel(src, tgt, src_lang, tgt_lang)?.0)
}

/// Test-set report for `model` in both case modes; writes `test.hyp` and
/// `report.txt` under `dir`.
fn test_report(
    dir: &Path,
    cfg: &ExperimentConfig,
    vocab: &SubwordVocabulary,
    model: &Checkpoint,
    test: &ParallelCorpus,
) -> Result<[BleuReport; 2]> {
    let decode = cfg.decode_config()?;
    let lm = cfg.fusion.lm_checkpoint.as_deref().map(|p| load_model(p, vocab, false)).transpose()?;
    let src: Vec<&str> = test.sources().collect();
    let refs: Vec<&str> = test.targets().collect();
    let (hyps, failed) = translate_sentences(model, lm.as_ref(), vocab, &src, &decode, cfg.decode.workers)?;
    if failed > 0 {
        log::warn!("{failed} test sentences failed to decode");
    }
    let ins = corpus_bleu(&hyps, &refs, CaseMode::Insensitive)?;
    let sen = corpus_bleu(&hyps, &refs, CaseMode::Sensitive)?;
    let mut hyp_text = hyps.join("\n");
    hyp_text.push('\n');
    write_text(&dir.join("test.hyp"), &hyp_text)?;
    write_text(&dir.join("report.txt"), &format!("{ins}\n{sen}\n"))?;
    Ok([ins, sen])
}

fn recipe_vocab(cfg: &ExperimentConfig, recipe: Recipe) -> Result<SubwordVocabulary> {
    if let Some(stem) = &cfg.vocab.path {
        return load_vocab(stem);
    }
    let d = &cfg.data;
    let mut files = vec![d.train_src.clone(), d.train_tgt.clone()];
    match recipe {
        Recipe::Transfer => {
            let t = cfg.transfer.as_ref().expect("checked by caller");
            files.extend([t.parent_train_src.clone(), t.parent_train_tgt.clone()]);
        }
        Recipe::Backtranslation => files.push(cfg.backtranslation.as_ref().expect("checked by caller").mono.clone()),
        Recipe::Baseline => {}
    }
    let mut text = Vec::new();
    for f in &files {
        text.extend(read_text_lines(f)?);
    }
    let vocab = learn_merges(&text, cfg.vocab.size)?;
    save_vocab(&vocab, &cfg.data.out_dir.join("vocab"))?;
    Ok(vocab)
}

/// Runs a full recipe. Every artifact goes under `data.out_dir`, starting
/// with `config.toml`, the resolved configuration.
pub fn run_experiment(cfg: &ExperimentConfig, recipe: Recipe) -> Result<RecipeReport> {
    cfg.validate()?;
    match recipe {
        Recipe::Transfer if cfg.transfer.is_none() => {
            return Err(PipelineError::Config("the transfer recipe needs a [transfer] section".into()))
        }
        Recipe::Backtranslation if cfg.backtranslation.is_none() => {
            return Err(PipelineError::Config("the backtranslation recipe needs a [backtranslation] section".into()))
        }
        _ => {}
    }
    let out = cfg.data.out_dir.clone();
    create_dir(&out)?;
    write_text(&out.join("config.toml"), &format!("# recipe = {recipe}\n{}", cfg.to_toml()))?;

    let vocab = in_stage("vocab", || recipe_vocab(cfg, recipe))?;
    let d = &cfg.data;
    let (train, valid, test) = in_stage("data", || {
        Ok((
            load_split(&d.train_src, &d.train_tgt, &d.src_lang, &d.tgt_lang)?,
            load_split(&d.valid_src, &d.valid_tgt, &d.src_lang, &d.tgt_lang)?,
            load_split(&d.test_src, &d.test_tgt, &d.src_lang, &d.tgt_lang)?,
        ))
    })?;
    let model_cfg = cfg.model.build(vocab.len(), ModelKind::Translation)?;
    let main_tcfg = cfg.train.build(cfg.train.epochs, true);
    let mut stages = Vec::new();
    let mut mixed_counts = None;
    let main_eval = Eval { valid: Some(&valid), test: Some(&test) };

    let final_session = match recipe {
        Recipe::Baseline => in_stage("train", || {
            let s = TrainingSession::new(model_cfg.clone(), vocab.fingerprint(), main_tcfg.clone())?;
            let (sum, s) = train_stage("train", &out.join("train"), cfg, &vocab, s, &train, main_eval, cfg.train.epochs)?;
            stages.push(sum);
            Ok(s)
        })?,
        Recipe::Transfer => {
            let t = cfg.transfer.as_ref().expect("checked above");
            let parent = in_stage("parent", || {
                let corpus = load_split(&t.parent_train_src, &t.parent_train_tgt, &t.parent_src_lang, &t.parent_tgt_lang)?;
                let tcfg = cfg.train.build(t.parent_epochs, false);
                let s = TrainingSession::new(model_cfg.clone(), vocab.fingerprint(), tcfg)?;
                let no_eval = Eval { valid: None, test: None };
                let (sum, s) = train_stage("parent", &out.join("parent"), cfg, &vocab, s, &corpus, no_eval, t.parent_epochs)?;
                stages.push(sum);
                Ok(s.checkpoint(false))
            })?;
            in_stage("child", || {
                let s = transfer_init(&parent, &vocab, main_tcfg.clone())?;
                let (sum, s) = train_stage("child", &out.join("child"), cfg, &vocab, s, &train, main_eval, cfg.train.epochs)?;
                stages.push(sum);
                Ok(s)
            })?
        }
        Recipe::Backtranslation => {
            let b = cfg.backtranslation.as_ref().expect("checked above");
            let reverse = in_stage("reverse", || match &b.reverse_checkpoint {
                Some(p) => {
                    let c = load_model(p, &vocab, false)?;
                    if c.config.kind != ModelKind::Translation {
                        return Err(PipelineError::Config("reverse checkpoint is not a translation model".into()));
                    }
                    Ok(c)
                }
                None => {
                    let epochs = b.reverse_epochs.unwrap_or(cfg.train.epochs);
                    let tcfg = cfg.train.build(epochs, false);
                    let s = TrainingSession::new(model_cfg.clone(), vocab.fingerprint(), tcfg)?;
                    let (rev_train, rev_valid) = (train.reversed(), valid.reversed());
                    let ev = Eval { valid: Some(&rev_valid), test: None };
                    let (sum, s) = train_stage("reverse", &out.join("reverse"), cfg, &vocab, s, &rev_train, ev, epochs)?;
                    stages.push(sum);
                    Ok(s.checkpoint(false))
                }
            })?;
            let synthetic = in_stage("backtranslate", || {
                let mono = MonoCorpus::load(&b.mono, &d.tgt_lang)?;
                let dir = out.join("backtranslate");
                create_dir(&dir)?;
                let decode = DecodeConfig { fusion: FusionConfig::none(), ..cfg.decode_config()? };
                let (synthetic, _) = backtranslate(&reverse, &vocab, &mono, &d.src_lang, &decode, cfg.decode.workers)?;
                write_tagged(&synthetic, &dir.join("synthetic"))?;
                Ok(synthetic)
            })?;
            let mixed = in_stage("mix", || {
                let m = mix(&train, &synthetic, Some(b.ratio), b.mix_seed)?;
                write_tagged(&m, &out.join("backtranslate").join("mixed"))?;
                Ok(m)
            })?;
            mixed_counts = Some((mixed.count_origin(Origin::Authentic), mixed.count_origin(Origin::Synthetic)));
            in_stage("forward", || {
                let s = TrainingSession::new(model_cfg.clone(), vocab.fingerprint(), main_tcfg.clone())?;
                let (sum, s) = train_stage("forward", &out.join("forward"), cfg, &vocab, s, &mixed, main_eval, cfg.train.epochs)?;
                stages.push(sum);
                Ok(s)
            })?
        }
    };
    let test_bleu = in_stage("report", || test_report(&out, cfg, &vocab, &final_session.checkpoint(false), &test))?;
    Ok(RecipeReport { recipe, out_dir: out, stages, test: test_bleu, mixed: mixed_counts })
}

/// Single training stage over `[data]` train/valid, from scratch or from
/// `init` via transfer initialization. Writes under `data.out_dir`.
pub fn cmd_train(cfg: &ExperimentConfig, init: Option<&Path>) -> Result<StageSummary> {
    cfg.validate()?;
    let out = &cfg.data.out_dir;
    create_dir(out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let vocab = in_stage("vocab", || recipe_vocab(cfg, Recipe::Baseline))?;
    let d = &cfg.data;
    let train = in_stage("data", || load_split(&d.train_src, &d.train_tgt, &d.src_lang, &d.tgt_lang))?;
    let valid = in_stage("data", || load_split(&d.valid_src, &d.valid_tgt, &d.src_lang, &d.tgt_lang))?;
    in_stage("train", || {
        let tcfg = cfg.train.build(cfg.train.epochs, true);
        let session = match init {
            Some(p) => transfer_init(&Checkpoint::load(p)?, &vocab, tcfg)?,
            None => TrainingSession::new(cfg.model.build(vocab.len(), ModelKind::Translation)?, vocab.fingerprint(), tcfg)?,
        };
        let ev = Eval { valid: Some(&valid), test: None };
        Ok(train_stage("train", out, cfg, &vocab, session, &train, ev, cfg.train.epochs)?.0)
    })
}
