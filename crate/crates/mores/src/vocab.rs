//! Vocabulary files and a deterministic whitespace/punctuation tokenizer.
//!
//! A vocabulary file lists one token per line; line `i` (from 0) gets id
//! `i + 4`, after the reserved `[PAD]`, `[UNK]`, `[CLS]`, `[SEP]`.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use mores_core::model::special::{FIRST_TOKEN, PAD, UNK};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// The bundled 1,000-token demo vocabulary.
pub const DEMO_VOCAB: &str = include_str!("../data/demo_vocab.txt");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

/// Token ids with a mask marking real (non-pad) positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl Tokenized {
    /// Pads with `[PAD]` up to `len`, masking the padding.
    pub fn padded(mut self, len: usize) -> Self {
        while self.ids.len() < len {
            self.ids.push(PAD);
            self.mask.push(false);
        }
        self
    }
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut ids = HashMap::new();
        for (i, t) in RESERVED.iter().enumerate() {
            ids.insert(t.to_string(), i as u32);
        }
        for t in tokens {
            let t = t.into();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(format!("invalid token {t:?} at id {}", all.len()));
            }
            if ids.insert(t.clone(), all.len() as u32).is_some() {
                return Err(format!("duplicate token {t:?}"));
            }
            all.push(t);
        }
        Ok(Vocab { tokens: all, ids })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        Self::from_tokens(text.lines().map(str::trim_end).filter(|l| !l.is_empty()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg,
        })
    }

    pub fn demo() -> Self {
        Self::parse(DEMO_VOCAB).expect("bundled vocabulary is valid")
    }

    /// Total ids including the reserved ones.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("[UNK]", String::as_str)
    }

    /// File contents: the non-reserved tokens, one per line.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens[FIRST_TOKEN as usize..] {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    /// Lowercases, splits on whitespace, emits each non-alphanumeric
    /// character as its own token, maps through the vocabulary with
    /// `[UNK]` fallback and keeps at most `max_len` tokens.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Tokenized {
        let ids: Vec<u32> = split_words(text).iter().take(max_len).map(|w| self.id(w)).collect();
        let mask = vec![true; ids.len()];
        Tokenized { ids, mask }
    }
}

/// Lowercased word and punctuation pieces of `text`.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// `count` distinct pronounceable lowercase words, deterministic in `seed`.
pub fn generate_words(count: usize, seed: u64) -> Vec<String> {
    const ONSETS: [&str; 16] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr",
    ];
    const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.random_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| {
                format!(
                    "{}{}",
                    ONSETS[rng.random_range(0..ONSETS.len())],
                    VOWELS[rng.random_range(0..VOWELS.len())]
                )
            })
            .collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub const DEMO_SEED: u64 = 2020;
pub const DEMO_WORDS: usize = 1000;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_words_map_to_ids() {
        let v = Vocab::from_tokens(["paranoid", "sc"]).unwrap();
        assert_eq!(v.tokenize("Paranoid SC", 10).ids, vec![4, 5]);
        assert_eq!(v.tokenize("Paranoid android", 10).ids, vec![4, UNK]);
        assert!(v.tokenize("", 10).ids.is_empty());
    }

    #[test]
    fn punctuation_splits_and_truncation() {
        assert_eq!(split_words("Hello, world!"), ["hello", ",", "world", "!"]);
        assert_eq!(split_words("  a.b  "), ["a", ".", "b"]);
        let v = Vocab::from_tokens(["a", "b", "."]).unwrap();
        let t = v.tokenize("a.b a", 3);
        assert_eq!(t.ids, vec![4, 6, 5]);
        let p = t.padded(5);
        assert_eq!(p.ids[3..], [PAD, PAD]);
        assert_eq!(p.mask, [true, true, true, false, false]);
    }

    #[test]
    fn bad_vocab_rejected() {
        assert!(Vocab::from_tokens(["a", "a"]).is_err());
        assert!(Vocab::from_tokens(["a b"]).is_err());
        assert!(Vocab::from_tokens(["[CLS]"]).is_err());
    }

    #[test]
    fn bundled_vocab_matches_generator() {
        let v = Vocab::demo();
        assert_eq!(v.len(), DEMO_WORDS + 4);
        let expected = Vocab::from_tokens(generate_words(DEMO_WORDS, DEMO_SEED)).unwrap();
        assert_eq!(v, expected);
        assert_eq!(v.to_file_string(), DEMO_VOCAB);
    }
}
