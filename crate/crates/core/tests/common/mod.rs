//! Synthetic corpora shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SRC_SYLLABLES: [&str; 16] = ["ка", "та", "ба", "ки", "ту", "мал", "сар", "кил", "бар", "кол", "яз", "ул", "ал", "ит", "өй", "күл"];
const TGT_SYLLABLES: [&str; 12] = ["ро", "ми", "ве", "до", "ну", "ши", "пе", "ло", "зо", "ры", "гу", "фа"];

/// Case suffixes for the high-resource ("parent") and low-resource ("child")
/// dialects. Same stems, vowel-harmony style divergence in the suffixes.
pub const PARENT_SUFFIXES: [&str; 3] = ["", "лар", "да"];
pub const CHILD_SUFFIXES: [&str; 3] = ["", "ләр", "дә"];
const TGT_SUFFIXES: [&str; 3] = ["", "ы", "е"];

pub struct Lexicon {
    pub src_stems: Vec<String>,
    pub tgt_stems: Vec<String>,
}

impl Lexicon {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |syl: &[&str]| {
            let mut set = BTreeSet::new();
            let mut out = Vec::new();
            while out.len() < n {
                let w = format!("{}{}", syl.choose(&mut rng).unwrap(), syl.choose(&mut rng).unwrap());
                if set.insert(w.clone()) {
                    out.push(w);
                }
            }
            out
        };
        let src_stems = draw(&SRC_SYLLABLES);
        let tgt_stems = draw(&TGT_SYLLABLES);
        Self { src_stems, tgt_stems }
    }

    /// One source sentence in the given dialect and its translation.
    pub fn pair(&self, rng: &mut ChaCha8Rng, suffixes: &[&str; 3]) -> (String, String) {
        let len = rng.gen_range(3..=6);
        let (mut s, mut t) = (Vec::new(), Vec::new());
        for _ in 0..len {
            let stem = rng.gen_range(0..self.src_stems.len());
            let case = rng.gen_range(0..3);
            s.push(format!("{}{}", self.src_stems[stem], suffixes[case]));
            t.push(format!("{}{}", self.tgt_stems[stem], TGT_SUFFIXES[case]));
        }
        (s.join(" "), t.join(" "))
    }

    pub fn pairs(&self, n: usize, suffixes: &[&str; 3], seed: u64) -> Vec<(String, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.pair(&mut rng, suffixes)).collect()
    }
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: impl IntoIterator<Item = S>) {
    let mut text = String::new();
    for l in lines {
        text.push_str(l.as_ref());
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

pub fn write_pairs(dir: &Path, stem: &str, pairs: &[(String, String)]) -> (PathBuf, PathBuf) {
    let s = dir.join(format!("{stem}.src"));
    let t = dir.join(format!("{stem}.tgt"));
    write_lines(&s, pairs.iter().map(|p| p.0.as_str()));
    write_lines(&t, pairs.iter().map(|p| p.1.as_str()));
    (s, t)
}

/// Paths of the written toy dialect fixture.
pub struct DialectFixture {
    pub dir: PathBuf,
    pub parent: (PathBuf, PathBuf),
    pub child_train: (PathBuf, PathBuf),
    pub child_valid: (PathBuf, PathBuf),
    pub child_test: (PathBuf, PathBuf),
    /// Child-dialect monolingual text.
    pub mono: PathBuf,
    pub n_parent: usize,
    pub n_child: usize,
}

pub fn dialect_fixture(dir: &Path, seed: u64) -> DialectFixture {
    fs::create_dir_all(dir).unwrap();
    let lex = Lexicon::new(40, seed);
    let parent = lex.pairs(5000, &PARENT_SUFFIXES, seed + 1);
    let child = lex.pairs(500 + 100 + 200, &CHILD_SUFFIXES, seed + 2);
    let mono = lex.pairs(2000, &CHILD_SUFFIXES, seed + 3);
    DialectFixture {
        dir: dir.to_path_buf(),
        parent: write_pairs(dir, "parent", &parent),
        child_train: write_pairs(dir, "child.train", &child[..500]),
        child_valid: write_pairs(dir, "child.valid", &child[500..600]),
        child_test: write_pairs(dir, "child.test", &child[600..]),
        mono: {
            let p = dir.join("child.mono");
            write_lines(&p, mono.iter().map(|m| m.0.as_str()));
            p
        },
        n_parent: parent.len(),
        n_child: 500,
    }
}
