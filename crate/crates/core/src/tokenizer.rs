//! Byte-pair-encoding subword vocabulary shared by every language of an
//! experiment.
//!
//! Words are split on whitespace into characters, and the final character of
//! each word carries the end-of-word marker `</w>`. Merges are learned by
//! repeatedly joining the most frequent adjacent symbol pair, ties broken by
//! the lexicographically smallest pair.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const END_OF_WORD: &str = "</w>";
pub const MERGES_HEADER: &str = "#version: lowres-nmt-bpe-1";

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocabulary size {requested} leaves no room beyond {required} specials and alphabet symbols")]
    VocabTooSmall { requested: usize, required: usize },
    #[error("no training text: corpora are empty")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("malformed vocabulary files: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TokenizerError + '_ {
    move |source| TokenizerError::Io { path: path.to_path_buf(), source }
}

/// Learned merges plus the token table they induce.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordVocabulary {
    merges: Vec<(String, String)>,
    tokens: Vec<String>,
    token_to_id: HashMap<String, TokenId>,
    merge_rank: HashMap<(String, String), usize>,
    fingerprint: u64,
}

/// Symbols of a word before any merge.
fn initial_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let last = chars.len().saturating_sub(1);
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| if i == last { format!("{c}{END_OF_WORD}") } else { c.to_string() })
        .collect()
}

fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(std::mem::take(&mut symbols[i]));
            i += 1;
        }
    }
    *symbols = out;
}

/// The base symbols are every observed character in both its word-internal
/// and its word-final (`</w>`) form, so any word over the observed characters
/// encodes without unknown tokens.
fn alphabet_of<'a>(chars: impl IntoIterator<Item = &'a char>) -> Vec<String> {
    let mut set = BTreeSet::new();
    for c in chars {
        set.insert(c.to_string());
        set.insert(format!("{c}{END_OF_WORD}"));
    }
    set.into_iter().collect()
}

/// Learns a vocabulary of exactly `vocab_size` tokens (or fewer, when the
/// corpus runs out of pairs) from the concatenation of `corpora`.
pub fn learn_merges<I, S>(corpora: I, vocab_size: usize) -> Result<SubwordVocabulary, TokenizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut word_counts: BTreeMap<String, usize> = BTreeMap::new();
    for line in corpora {
        let line: String = line.as_ref().nfc().collect();
        for word in line.split_whitespace() {
            *word_counts.entry(word.to_string()).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let chars: BTreeSet<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    let alphabet = alphabet_of(&chars);
    let required = SPECIAL_TOKENS.len() + alphabet.len();
    if vocab_size <= required {
        return Err(TokenizerError::VocabTooSmall { requested: vocab_size, required });
    }

    let mut words: Vec<(Vec<String>, usize)> =
        word_counts.iter().map(|(w, &c)| (initial_symbols(w), c)).collect();
    let mut known: BTreeSet<String> = alphabet.iter().cloned().collect();
    let mut token_count = required;
    let mut merges = Vec::new();

    while token_count < vocab_size {
        let mut pair_counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (symbols, count) in &words {
            for w in symbols.windows(2) {
                *pair_counts.entry((w[0].as_str(), w[1].as_str())).or_default() += count;
            }
        }
        let best = pair_counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            .map(|((l, r), _)| (l.to_string(), r.to_string()));
        let Some((left, right)) = best else { break };
        for (symbols, _) in &mut words {
            merge_pair(symbols, &left, &right);
        }
        if known.insert(format!("{left}{right}")) {
            token_count += 1;
        }
        merges.push((left, right));
    }
    Ok(SubwordVocabulary::from_alphabet(&alphabet, merges))
}

impl SubwordVocabulary {
    /// Builds the token table: specials, then the sorted alphabet, then each
    /// merge result in merge order.
    pub fn from_alphabet(alphabet: &[String], merges: Vec<(String, String)>) -> Self {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut sorted = alphabet.to_vec();
        sorted.sort();
        for s in sorted {
            if seen.insert(s.clone()) {
                tokens.push(s);
            }
        }
        for (l, r) in &merges {
            let joined = format!("{l}{r}");
            if seen.insert(joined.clone()) {
                tokens.push(joined);
            }
        }
        Self::assemble(tokens, merges)
    }

    /// Alphabet of a character set, in the same two-form convention used by
    /// [`learn_merges`].
    pub fn alphabet_for(chars: &str) -> Vec<String> {
        let set: BTreeSet<char> = chars.chars().filter(|c| !c.is_whitespace()).collect();
        alphabet_of(&set)
    }

    fn assemble(tokens: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let token_to_id = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        let merge_rank = merges.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        let fingerprint = compute_fingerprint(&merges, &tokens);
        Self { merges, tokens, token_to_id, merge_rank, fingerprint }
    }

    /// Rebuilds a vocabulary from an explicit token list and merge list,
    /// checking that they are consistent.
    pub fn from_parts(tokens: Vec<String>, merges: Vec<(String, String)>) -> Result<Self, TokenizerError> {
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*special) {
                return Err(TokenizerError::Format(format!("id {i} must be the special token {special}")));
            }
        }
        let set: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();
        if set.len() != tokens.len() {
            return Err(TokenizerError::Format("duplicate tokens".into()));
        }
        for (l, r) in &merges {
            let joined = format!("{l}{r}");
            if !set.contains(l.as_str()) || !set.contains(r.as_str()) || !set.contains(joined.as_str()) {
                return Err(TokenizerError::Format(format!("merge `{l} {r}` is not covered by the token list")));
            }
        }
        Ok(Self::assemble(tokens, merges))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Subword segmentation of a single word, merges applied in learned order.
    pub fn segment(&self, word: &str) -> Vec<String> {
        let mut symbols = initial_symbols(word);
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            merge_pair(&mut symbols, l, r);
        }
        symbols
    }

    /// Token ids for `sentence`, without `<s>`/`</s>` framing. Unknown
    /// symbols map to `<unk>`.
    pub fn encode(&self, sentence: &str) -> Vec<TokenId> {
        let sentence: String = sentence.nfc().collect();
        sentence
            .split_whitespace()
            .flat_map(|w| self.segment(w))
            .map(|s| self.id(&s).unwrap_or(UNK))
            .collect()
    }

    /// Inverse of [`encode`](Self::encode); special tokens are dropped.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            let token = self.token(id).ok_or(TokenizerError::IdOutOfRange { id, size: self.len() })?;
            if (id as usize) < SPECIAL_TOKENS.len() {
                continue;
            }
            match token.strip_suffix(END_OF_WORD) {
                Some(stem) => {
                    out.push_str(stem);
                    out.push(' ');
                }
                None => out.push_str(token),
            }
        }
        Ok(out.trim_end_matches(' ').to_string())
    }

    pub fn save(&self, merges_path: &Path, vocab_path: &Path) -> Result<(), TokenizerError> {
        let mut m = io::BufWriter::new(fs::File::create(merges_path).map_err(io_err(merges_path))?);
        writeln!(m, "{MERGES_HEADER}").map_err(io_err(merges_path))?;
        for (l, r) in &self.merges {
            writeln!(m, "{l} {r}").map_err(io_err(merges_path))?;
        }
        m.flush().map_err(io_err(merges_path))?;
        let mut v = io::BufWriter::new(fs::File::create(vocab_path).map_err(io_err(vocab_path))?);
        for t in &self.tokens {
            writeln!(v, "{t}").map_err(io_err(vocab_path))?;
        }
        v.flush().map_err(io_err(vocab_path))
    }

    pub fn load(merges_path: &Path, vocab_path: &Path) -> Result<Self, TokenizerError> {
        let file = fs::File::open(merges_path).map_err(io_err(merges_path))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines.next().transpose().map_err(io_err(merges_path))?;
        if header.as_deref() != Some(MERGES_HEADER) {
            return Err(TokenizerError::Format(format!("{} lacks header `{MERGES_HEADER}`", merges_path.display())));
        }
        let mut merges = Vec::new();
        for line in lines {
            let line = line.map_err(io_err(merges_path))?;
            if line.is_empty() {
                continue;
            }
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| TokenizerError::Format(format!("bad merge line `{line}`")))?;
            merges.push((l.to_string(), r.to_string()));
        }
        let file = fs::File::open(vocab_path).map_err(io_err(vocab_path))?;
        let tokens = BufReader::new(file)
            .lines()
            .collect::<Result<Vec<_>, _>>()
            .map_err(io_err(vocab_path))?;
        Self::from_parts(tokens, merges)
    }
}

fn compute_fingerprint(merges: &[(String, String)], tokens: &[String]) -> u64 {
    let mut h = Sha256::new();
    h.update(b"merges\n");
    for (l, r) in merges {
        h.update(l.as_bytes());
        h.update(b" ");
        h.update(r.as_bytes());
        h.update(b"\n");
    }
    h.update(b"tokens\n");
    for t in tokens {
        h.update(t.as_bytes());
        h.update(b"\n");
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}
