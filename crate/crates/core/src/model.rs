//! Transformer encoder-decoder and decoder-only language model.
//!
//! Post-LN residual blocks, sinusoidal positions, scaled dot-product
//! attention and ReLU feed-forward layers, built on [`crate::tensor::Graph`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Element, Graph, Tensor, TensorError, Var};
use crate::tokenizer::{TokenId, BOS, EOS, PAD};

const MASKED: f64 = -1e9;
const LN_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    Length { len: usize, max_len: usize },
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    Token { id: usize, vocab_size: usize },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Translation,
    LanguageModel,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Translation => "translation",
            ModelKind::LanguageModel => "language-model",
        })
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translation" => Ok(ModelKind::Translation),
            "language-model" => Ok(ModelKind::LanguageModel),
            other => Err(ModelError::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub max_len: usize,
    pub share_embeddings: bool,
    pub tie_softmax: bool,
    pub kind: ModelKind,
}

impl ModelConfig {
    /// 2 layers, d_model 64, 4 heads, feed-forward 128.
    pub fn desk(vocab_size: usize, kind: ModelKind) -> Self {
        Self {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            ffn_dim: 128,
            dropout: 0.1,
            vocab_size,
            max_len: 256,
            share_embeddings: true,
            tie_softmax: true,
            kind,
        }
    }

    /// 6 layers, d_model 512, 8 heads, feed-forward 2048.
    pub fn base(vocab_size: usize, kind: ModelKind) -> Self {
        Self { n_layers: 6, d_model: 512, n_heads: 8, ffn_dim: 2048, ..Self::desk(vocab_size, kind) }
    }

    pub fn profile(name: &str, vocab_size: usize, kind: ModelKind) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(vocab_size, kind)),
            "base" => Ok(Self::base(vocab_size, kind)),
            other => Err(ModelError::Config(format!("unknown profile `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive =
            [("n_layers", self.n_layers), ("d_model", self.d_model), ("n_heads", self.n_heads), ("ffn_dim", self.ffn_dim), ("vocab_size", self.vocab_size), ("max_len", self.max_len)];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.vocab_size <= EOS as usize {
            return Err(ModelError::Config(format!("vocab_size {} has no room for special tokens", self.vocab_size)));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("model.kind".into(), self.kind.to_string()),
            ("model.n_layers".into(), self.n_layers.to_string()),
            ("model.d_model".into(), self.d_model.to_string()),
            ("model.n_heads".into(), self.n_heads.to_string()),
            ("model.ffn_dim".into(), self.ffn_dim.to_string()),
            ("model.dropout".into(), format!("{:?}", self.dropout)),
            ("model.vocab_size".into(), self.vocab_size.to_string()),
            ("model.max_len".into(), self.max_len.to_string()),
            ("model.share_embeddings".into(), self.share_embeddings.to_string()),
            ("model.tie_softmax".into(), self.tie_softmax.to_string()),
        ]
    }

    pub fn from_pairs(map: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = map.get(key).ok_or_else(|| ModelError::Config(format!("missing `{key}`")))?;
            raw.parse().map_err(|_| ModelError::Config(format!("bad value `{raw}` for `{key}`")))
        }
        let cfg = Self {
            kind: get(map, "model.kind")?,
            n_layers: get(map, "model.n_layers")?,
            d_model: get(map, "model.d_model")?,
            n_heads: get(map, "model.n_heads")?,
            ffn_dim: get(map, "model.ffn_dim")?,
            dropout: get(map, "model.dropout")?,
            vocab_size: get(map, "model.vocab_size")?,
            max_len: get(map, "model.max_len")?,
            share_embeddings: get(map, "model.share_embeddings")?,
            tie_softmax: get(map, "model.tie_softmax")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn encoder_embedding(&self) -> Option<&'static str> {
        match (self.kind, self.share_embeddings) {
            (ModelKind::LanguageModel, _) => None,
            (ModelKind::Translation, true) => Some("embedding"),
            (ModelKind::Translation, false) => Some("encoder.embedding"),
        }
    }

    fn decoder_embedding(&self) -> &'static str {
        match (self.kind, self.share_embeddings) {
            (ModelKind::Translation, false) => "decoder.embedding",
            _ => "embedding",
        }
    }

    /// Every parameter path with its shape. Aliased tensors appear once.
    pub fn shape_table(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f, v) = (self.d_model, self.ffn_dim, self.vocab_size);
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        if let Some(e) = self.encoder_embedding() {
            out.push((e.into(), vec![v, d]));
        }
        if self.encoder_embedding() != Some(self.decoder_embedding()) {
            out.push((self.decoder_embedding().into(), vec![v, d]));
        }
        let attn = |out: &mut Vec<(String, Vec<usize>)>, p: &str| {
            for proj in ["q", "k", "v", "o"] {
                out.push((format!("{p}.{proj}.weight"), vec![d, d]));
                out.push((format!("{p}.{proj}.bias"), vec![d]));
            }
        };
        let ln = |out: &mut Vec<(String, Vec<usize>)>, p: &str| {
            out.push((format!("{p}.gain"), vec![d]));
            out.push((format!("{p}.bias"), vec![d]));
        };
        let ffn = |out: &mut Vec<(String, Vec<usize>)>, p: &str| {
            out.push((format!("{p}.ffn.w1"), vec![d, f]));
            out.push((format!("{p}.ffn.b1"), vec![f]));
            out.push((format!("{p}.ffn.w2"), vec![f, d]));
            out.push((format!("{p}.ffn.b2"), vec![d]));
        };
        if self.kind == ModelKind::Translation {
            for i in 0..self.n_layers {
                let p = format!("encoder.layers.{i}");
                attn(&mut out, &format!("{p}.self_attn"));
                ln(&mut out, &format!("{p}.ln1"));
                ffn(&mut out, &p);
                ln(&mut out, &format!("{p}.ln2"));
            }
        }
        for i in 0..self.n_layers {
            let p = format!("decoder.layers.{i}");
            attn(&mut out, &format!("{p}.self_attn"));
            ln(&mut out, &format!("{p}.ln1"));
            if self.kind == ModelKind::Translation {
                attn(&mut out, &format!("{p}.cross_attn"));
                ln(&mut out, &format!("{p}.ln3"));
            }
            ffn(&mut out, &p);
            ln(&mut out, &format!("{p}.ln2"));
        }
        if !self.tie_softmax {
            out.push(("output.projection".into(), vec![d, v]));
        }
        out
    }
}

/// Closed-form parameter count for `config`.
pub fn count_params(config: &ModelConfig) -> usize {
    let (d, f, v, n) = (config.d_model, config.ffn_dim, config.vocab_size, config.n_layers);
    let attn = 4 * (d * d + d);
    let ln = 2 * d;
    let ffn = d * f + f + f * d + d;
    let embeddings = match (config.kind, config.share_embeddings) {
        (ModelKind::Translation, false) => 2 * v * d,
        _ => v * d,
    };
    let layers = match config.kind {
        ModelKind::Translation => n * (attn + 2 * ln + ffn) + n * (2 * attn + 3 * ln + ffn),
        ModelKind::LanguageModel => n * (attn + 2 * ln + ffn),
    };
    let output = if config.tie_softmax { 0 } else { d * v };
    embeddings + layers + output
}

/// Named parameter tensors. Aliased paths (shared embeddings, tied
/// softmax) resolve to a single stored tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T: Element = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Parameters<T> {
    pub fn from_map(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor<T>> {
        self.tensors
    }

    pub fn cast<U: Element>(&self) -> Parameters<U> {
        Parameters {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| {
                    let mut c = t.cast::<U>();
                    c.set_requires_grad(t.requires_grad());
                    (k.clone(), c)
                })
                .collect(),
        }
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        for t in self.tensors.values_mut() {
            t.set_requires_grad(on);
        }
    }

    /// Checks that the stored paths and shapes are exactly those `config`
    /// implies.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let table = config.shape_table();
        if table.len() != self.tensors.len() {
            return Err(ModelError::Config(format!(
                "{} parameters stored but config implies {}",
                self.tensors.len(),
                table.len()
            )));
        }
        for (name, shape) in table {
            let t = self.get(&name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Config(format!("`{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
        }
        Ok(())
    }
}

/// Deterministic initialization: matrices uniform in `±1/√d_model`, biases
/// zero, layer-norm gains one.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<Parameters> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (config.d_model as f64).sqrt();
    let mut tensors = BTreeMap::new();
    for (name, shape) in config.shape_table() {
        let t = if name.ends_with(".gain") {
            Tensor::full(shape, 1.0f32)
        } else if shape.len() == 1 {
            Tensor::zeros(shape)
        } else {
            Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound) as f32)
        };
        tensors.insert(name, t.requiring_grad());
    }
    Ok(Parameters { tensors })
}

/// Token-id sequences right-padded with [`PAD`] to a common length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub batch: usize,
    pub len: usize,
}

impl TokenBatch {
    pub fn from_sequences<S: AsRef<[TokenId]>>(seqs: &[S]) -> Self {
        let len = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let mut ids = vec![PAD as usize; seqs.len() * len];
        for (b, s) in seqs.iter().enumerate() {
            for (i, &t) in s.as_ref().iter().enumerate() {
                ids[b * len + i] = t as usize;
            }
        }
        Self { ids, batch: seqs.len(), len }
    }

    pub fn is_pad(&self, b: usize, i: usize) -> bool {
        self.ids[b * self.len + i] == PAD as usize
    }

    fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.batch == 0 || self.len == 0 {
            return Err(ModelError::Usage("empty batch".into()));
        }
        if self.len > config.max_len {
            return Err(ModelError::Length { len: self.len, max_len: config.max_len });
        }
        if let Some(&id) = self.ids.iter().find(|&&id| id >= config.vocab_size) {
            return Err(ModelError::Token { id, vocab_size: config.vocab_size });
        }
        Ok(())
    }
}

/// Graph handles for every parameter of one model.
pub struct ParamVars {
    vars: HashMap<String, Var>,
}

impl ParamVars {
    pub fn bind<'a, T: Element>(g: &mut Graph<'a, T>, params: &'a Parameters<T>) -> Self {
        Self { vars: params.tensors.iter().map(|(k, t)| (k.clone(), g.input(t))).collect() }
    }

    /// Handles for parameters registered by the caller.
    pub fn from_pairs<'n>(pairs: impl IntoIterator<Item = (&'n str, Var)>) -> Self {
        Self { vars: pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Encoder output together with its key padding.
#[derive(Clone, Copy, Debug)]
pub struct Memory<'m> {
    pub var: Var,
    pub batch: usize,
    pub len: usize,
    pub key_pad: &'m [bool],
}

/// Dropout state for a forward pass; `None` means evaluation mode.
pub struct Mode<'r> {
    rng: Option<&'r mut dyn RngCore>,
}

impl<'r> Mode<'r> {
    pub fn eval() -> Self {
        Self { rng: None }
    }

    pub fn train(rng: &'r mut dyn RngCore) -> Self {
        Self { rng: Some(rng) }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    fn dropout<T: Element>(&mut self, g: &mut Graph<'_, T>, x: Var, p: f64) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if p > 0.0 => Ok(g.dropout(x, p, rng)?),
            _ => Ok(x),
        }
    }
}

pub fn sinusoidal_positions(len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let freq = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / freq;
            pe[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

fn linear<T: Element>(g: &mut Graph<'_, T>, pv: &ParamVars, x: Var, weight: &str, bias: &str) -> Result<Var> {
    let y = g.matmul(x, pv.get(weight)?)?;
    Ok(g.add_broadcast(y, pv.get(bias)?)?)
}

fn embed<T: Element>(
    g: &mut Graph<'_, T>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    table: &str,
    tokens: &TokenBatch,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let e = g.embedding(pv.get(table)?, &tokens.ids, &[tokens.batch, tokens.len])?;
    let e = g.scale(e, (cfg.d_model as f64).sqrt())?;
    let pe = sinusoidal_positions(tokens.len, cfg.d_model).into_iter().map(T::from_f64).collect();
    let pe = g.constant(vec![tokens.len, cfg.d_model], pe)?;
    let x = g.add_broadcast(e, pe)?;
    mode.dropout(g, x, cfg.dropout)
}

#[allow(clippy::too_many_arguments)]
fn attention<T: Element>(
    g: &mut Graph<'_, T>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    prefix: &str,
    query: Var,
    keys: Var,
    mask: &[T],
) -> Result<Var> {
    let h = cfg.n_heads;
    let p = |s: &str| format!("{prefix}.{s}");
    let q = linear(g, pv, query, &p("q.weight"), &p("q.bias"))?;
    let k = linear(g, pv, keys, &p("k.weight"), &p("k.bias"))?;
    let v = linear(g, pv, keys, &p("v.weight"), &p("v.bias"))?;
    let (q, k, v) = (g.split_heads(q, h)?, g.split_heads(k, h)?, g.split_heads(v, h)?);
    let scores = g.bmm_nt(q, k)?;
    let scores = g.scale(scores, 1.0 / (cfg.d_head() as f64).sqrt())?;
    let scores = g.add_mask(scores, mask, h)?;
    let weights = g.softmax(scores)?;
    let ctx = g.bmm(weights, v)?;
    let ctx = g.merge_heads(ctx, h)?;
    linear(g, pv, ctx, &p("o.weight"), &p("o.bias"))
}

fn add_norm<T: Element>(
    g: &mut Graph<'_, T>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    residual: Var,
    sub: Var,
    ln: &str,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let sub = mode.dropout(g, sub, cfg.dropout)?;
    let x = g.add(residual, sub)?;
    Ok(g.layer_norm(x, pv.get(&format!("{ln}.gain"))?, pv.get(&format!("{ln}.bias"))?, LN_EPS)?)
}

fn feed_forward<T: Element>(g: &mut Graph<'_, T>, pv: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(g, pv, x, &format!("{prefix}.ffn.w1"), &format!("{prefix}.ffn.b1"))?;
    let h = g.relu(h)?;
    linear(g, pv, h, &format!("{prefix}.ffn.w2"), &format!("{prefix}.ffn.b2"))
}

/// Padding flags of `tokens`, row-major `[batch, len]`.
pub fn key_padding(tokens: &TokenBatch) -> Vec<bool> {
    tokens.ids.iter().map(|&id| id == PAD as usize).collect()
}

fn pad_mask<T: Element>(batch: usize, queries: usize, keys: usize, key_pad: &[bool]) -> Vec<T> {
    let mut mask = Vec::with_capacity(batch * queries * keys);
    for b in 0..batch {
        for _ in 0..queries {
            mask.extend(key_pad[b * keys..(b + 1) * keys].iter().map(|&p| T::from_f64(if p { MASKED } else { 0.0 })));
        }
    }
    mask
}

/// Source tokens to memory `[b, s, d_model]`.
pub fn encoder_forward<T: Element>(
    g: &mut Graph<'_, T>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    src: &TokenBatch,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let table = cfg
        .encoder_embedding()
        .ok_or_else(|| ModelError::Usage("a language model has no encoder".into()))?;
    src.check(cfg)?;
    let mask = pad_mask::<T>(src.batch, src.len, src.len, &key_padding(src));
    let mut x = embed(g, pv, cfg, table, src, mode)?;
    for i in 0..cfg.n_layers {
        let p = format!("encoder.layers.{i}");
        let a = attention(g, pv, cfg, &format!("{p}.self_attn"), x, x, &mask)?;
        x = add_norm(g, pv, cfg, x, a, &format!("{p}.ln1"), mode)?;
        let f = feed_forward(g, pv, &p, x)?;
        x = add_norm(g, pv, cfg, x, f, &format!("{p}.ln2"), mode)?;
    }
    Ok(x)
}

/// Target prefixes to logits `[b, t, vocab_size]`. With `memory = None` this
/// is the language model.
pub fn decoder_forward<T: Element>(
    g: &mut Graph<'_, T>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    tgt: &TokenBatch,
    memory: Option<Memory<'_>>,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    match (cfg.kind, memory.is_some()) {
        (ModelKind::LanguageModel, true) => {
            return Err(ModelError::Usage("a language model accepts no encoder memory".into()))
        }
        (ModelKind::Translation, false) => {
            return Err(ModelError::Usage("a translation decoder needs encoder memory".into()))
        }
        _ => {}
    }
    tgt.check(cfg)?;
    let (b, t) = (tgt.batch, tgt.len);
    let mut causal = Vec::with_capacity(b * t * t);
    for _ in 0..b {
        for q in 0..t {
            causal.extend((0..t).map(|k| T::from_f64(if k > q { MASKED } else { 0.0 })));
        }
    }
    let cross_mask = match memory {
        Some(m) => {
            if m.batch != b {
                return Err(ModelError::Usage(format!("memory batch {} != target batch {b}", m.batch)));
            }
            pad_mask::<T>(b, t, m.len, m.key_pad)
        }
        None => Vec::new(),
    };
    let table = cfg.decoder_embedding();
    let mut x = embed(g, pv, cfg, table, tgt, mode)?;
    for i in 0..cfg.n_layers {
        let p = format!("decoder.layers.{i}");
        let a = attention(g, pv, cfg, &format!("{p}.self_attn"), x, x, &causal)?;
        x = add_norm(g, pv, cfg, x, a, &format!("{p}.ln1"), mode)?;
        if let Some(m) = memory {
            let c = attention(g, pv, cfg, &format!("{p}.cross_attn"), x, m.var, &cross_mask)?;
            x = add_norm(g, pv, cfg, x, c, &format!("{p}.ln3"), mode)?;
        }
        let f = feed_forward(g, pv, &p, x)?;
        x = add_norm(g, pv, cfg, x, f, &format!("{p}.ln2"), mode)?;
    }
    if cfg.tie_softmax {
        Ok(g.matmul_nt(x, pv.get(table)?)?)
    } else {
        Ok(g.matmul(x, pv.get("output.projection")?)?)
    }
}

/// Teacher-forcing inputs and outputs for a batch of target sequences:
/// `bos + y` in, `y + eos` out.
pub fn teacher_forcing<S: AsRef<[TokenId]>>(targets: &[S]) -> (TokenBatch, Vec<usize>) {
    let inputs: Vec<Vec<TokenId>> = targets.iter().map(|t| std::iter::once(BOS).chain(t.as_ref().iter().copied()).collect()).collect();
    let outputs: Vec<Vec<TokenId>> = targets.iter().map(|t| t.as_ref().iter().copied().chain(std::iter::once(EOS)).collect()).collect();
    (TokenBatch::from_sequences(&inputs), TokenBatch::from_sequences(&outputs).ids)
}

/// Source ids with the end marker appended.
pub fn source_batch<S: AsRef<[TokenId]>>(sources: &[S]) -> TokenBatch {
    let seqs: Vec<Vec<TokenId>> = sources.iter().map(|s| s.as_ref().iter().copied().chain(std::iter::once(EOS)).collect()).collect();
    TokenBatch::from_sequences(&seqs)
}

/// Label-smoothed translation loss for one batch.
pub fn translation_loss<T: Element, S: AsRef<[TokenId]>>(
    g: &mut Graph<'_, T>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    sources: &[S],
    targets: &[S],
    smoothing: f64,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let src = source_batch(sources);
    let memory = encoder_forward(g, pv, cfg, &src, mode)?;
    let pad = key_padding(&src);
    let mem = Memory { var: memory, batch: src.batch, len: src.len, key_pad: &pad };
    let (inputs, outputs) = teacher_forcing(targets);
    let logits = decoder_forward(g, pv, cfg, &inputs, Some(mem), mode)?;
    Ok(g.cross_entropy_ls(logits, &outputs, smoothing, PAD as usize)?)
}

/// Next-token loss for a batch of monolingual sequences.
pub fn lm_loss<T: Element, S: AsRef<[TokenId]>>(
    g: &mut Graph<'_, T>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    sentences: &[S],
    smoothing: f64,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let (inputs, outputs) = teacher_forcing(sentences);
    let logits = decoder_forward(g, pv, cfg, &inputs, None, mode)?;
    Ok(g.cross_entropy_ls(logits, &outputs, smoothing, PAD as usize)?)
}
