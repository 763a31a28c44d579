//! Decoder-only language models over monolingual text, used for fusion.

use std::path::Path;

use crate::corpus::{normalize_line, read_lines, CorpusError};
use crate::decoder::{fuse_step_scores, FusionConfig, LanguageModelScorer, StepScorer};
use crate::model::{lm_loss, Mode, ModelConfig, ModelKind, ParamVars, Parameters};
use crate::tensor::Graph;
use crate::tokenizer::{SubwordVocabulary, TokenId, BOS};
use crate::trainer::{Checkpoint, EpochStats, TrainConfig, TrainData, TrainError, TrainingSession};

type Result<T> = std::result::Result<T, TrainError>;

/// Sentences of one language. Never holds empty sentences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonoCorpus {
    pub lang: String,
    sentences: Vec<String>,
}

impl MonoCorpus {
    /// Normalizes every line and drops the ones left empty.
    pub fn new<S: AsRef<str>>(lang: &str, lines: impl IntoIterator<Item = S>) -> Self {
        let sentences = lines.into_iter().map(|l| normalize_line(l.as_ref())).filter(|l| !l.is_empty()).collect();
        Self { lang: lang.to_string(), sentences }
    }

    pub fn load(path: &Path, lang: &str) -> std::result::Result<Self, CorpusError> {
        Ok(Self::new(lang, read_lines(path)?))
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Trains a language model for `tcfg.epochs` epochs.
///
/// `shared_fingerprint` is the fingerprint of the translation model the LM
/// will be fused with; a vocabulary that does not match it is rejected.
/// `on_epoch` sees the session after every epoch.
pub fn train_lm(
    mono: &MonoCorpus,
    config: ModelConfig,
    tcfg: TrainConfig,
    vocab: &SubwordVocabulary,
    shared_fingerprint: Option<u64>,
    mut on_epoch: impl FnMut(usize, &TrainingSession, &EpochStats) -> Result<()>,
) -> Result<Checkpoint> {
    if config.kind != ModelKind::LanguageModel {
        return Err(TrainError::Config(format!("model kind is {}, expected language-model", config.kind)));
    }
    if config.vocab_size != vocab.len() {
        return Err(TrainError::Config(format!(
            "model vocab_size {} but the vocabulary has {} tokens",
            config.vocab_size,
            vocab.len()
        )));
    }
    if let Some(fp) = shared_fingerprint {
        if fp != vocab.fingerprint() {
            return Err(TrainError::Config(format!(
                "vocabulary fingerprint {:016x} differs from the translation model's {fp:016x}",
                vocab.fingerprint()
            )));
        }
    }
    let (data, _) = TrainData::from_mono(mono.sentences(), vocab, config.max_len);
    let epochs = tcfg.epochs;
    let mut session = TrainingSession::new(config, vocab.fingerprint(), tcfg)?;
    for e in 0..epochs {
        let stats = session.train_epoch(&data, e)?;
        on_epoch(e, &session, &stats)?;
    }
    Ok(session.checkpoint(false))
}

/// `exp` of the mean next-token cross-entropy over `mono`. Targets include
/// the end marker but not the start marker. Sentences that do not fit the
/// model's `max_len` are skipped.
pub fn perplexity(config: &ModelConfig, params: &Parameters, vocab: &SubwordVocabulary, mono: &MonoCorpus) -> Result<f64> {
    if config.kind != ModelKind::LanguageModel {
        return Err(TrainError::Usage("perplexity needs a language model".into()));
    }
    let seqs: Vec<Vec<TokenId>> =
        mono.sentences().iter().map(|s| vocab.encode(s)).filter(|t| t.len() < config.max_len).collect();
    let (mut nll, mut tokens) = (0.0f64, 0usize);
    for chunk in seqs.chunks(32) {
        let mut g = Graph::inference();
        let pv = ParamVars::bind(&mut g, params);
        let loss = lm_loss(&mut g, &pv, config, chunk, 0.0, &mut Mode::eval())?;
        let n: usize = chunk.iter().map(|s| s.len() + 1).sum();
        nll += g.value(loss)[0] as f64 * n as f64;
        tokens += n;
    }
    if tokens == 0 {
        return Err(TrainError::Usage("no scorable sentences".into()));
    }
    Ok((nll / tokens as f64).exp())
}

/// Next-token distribution after `bos + prefix`.
pub fn next_token_probabilities(config: &ModelConfig, params: &Parameters, prefix: &[TokenId]) -> Result<Vec<f64>> {
    let scorer = LanguageModelScorer::new(config, params, 0)?;
    let ctx: Vec<TokenId> = std::iter::once(BOS).chain(prefix.iter().copied()).collect();
    let logits = scorer.next_logits(&[ctx])?;
    let logp = fuse_step_scores(&logits[0], None, &FusionConfig::none())?;
    Ok(logp.into_iter().map(f64::exp).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mono_drops_empty_lines() {
        let m = MonoCorpus::new("tt", ["  a b ", "", "   ", "c"]);
        assert_eq!(m.sentences(), ["a b", "c"]);
    }
}
