//! Word-level tokenizer with atomic special tokens.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const USER: &str = "[USER]";
pub const SYSTEM: &str = "[SYSTEM]";
pub const TRANSITION: &str = "[TRANSITION]";
pub const END: &str = "[END]";
pub const UNK_TOK: &str = "[UNK_TOK]";

/// Specials in their fixed id order.
pub const SPECIALS: [&str; 8] = [PAD, CLS, SEP, USER, SYSTEM, TRANSITION, END, UNK_TOK];

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const USER_ID: u32 = 3;
pub const SYSTEM_ID: u32 = 4;
pub const TRANSITION_ID: u32 = 5;
pub const END_ID: u32 = 6;
pub const UNK_ID: u32 = 7;

const ATTACH_LEFT: [&str; 6] = [".", ",", "?", "!", ";", ":"];

/// Split text into lowercased word and punctuation pieces, keeping specials whole.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if c == '[' {
            if let Some(sp) = SPECIALS.iter().find(|sp| rest.starts_with(**sp)) {
                flush(&mut word, &mut out);
                out.push((*sp).to_string());
                rest = &rest[sp.len()..];
                continue;
            }
        }
        if c.is_alphanumeric() || c == '\'' {
            word.extend(c.to_lowercase());
        } else {
            flush(&mut word, &mut out);
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
        rest = &rest[c.len_utf8()..];
    }
    flush(&mut word, &mut out);
    out
}

fn flush(word: &mut String, out: &mut Vec<String>) {
    if !word.is_empty() {
        out.push(std::mem::take(word));
    }
}

/// Join pieces back into text: single spaces, closing punctuation attached left.
pub fn join_words<S: AsRef<str>>(pieces: &[S]) -> String {
    let mut out = String::new();
    for p in pieces {
        let p = p.as_ref();
        if !out.is_empty() && !ATTACH_LEFT.contains(&p) {
            out.push(' ');
        }
        out.push_str(p);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Tokenizer {
    fn from(vocab: Vec<String>) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { vocab, index }
    }
}

impl From<Tokenizer> for Vec<String> {
    fn from(t: Tokenizer) -> Self {
        t.vocab
    }
}

impl Tokenizer {
    /// Build a vocabulary from texts; words are ordered by descending count, then alphabetically.
    pub fn build<I, S>(texts: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for w in split_words(t.as_ref()) {
                if !SPECIALS.contains(&w.as_str()) {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        let mut words: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let vocab = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect::<Vec<_>>();
        Self::from(vocab)
    }

    pub fn from_vocab(vocab: Vec<String>) -> Result<Self> {
        if vocab.len() < SPECIALS.len() || vocab.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::Config(
                "vocabulary must start with the special tokens in fixed order".into(),
            ));
        }
        Ok(Self::from(vocab))
    }

    /// Vocabulary file: one token per line, specials first.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_vocab(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.vocab.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        self.vocab.get(id as usize).map(String::as_str).unwrap_or(UNK_TOK)
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        split_words(text).iter().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let pieces: Vec<&str> = ids.iter().map(|&i| self.token(i)).collect();
        join_words(&pieces)
    }

    /// Hex sha256 of the vocabulary, one token per line.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.vocab {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> Tokenizer {
        Tokenizer::build(["hi there london kings cross, i'm fine."], 1)
    }

    #[test]
    fn specials_are_atomic() {
        let t = tok();
        assert_eq!(
            t.tokenize("[USER] hi there"),
            vec![USER_ID, t.id("hi"), t.id("there")]
        );
        assert_eq!(split_words("a[TRANSITION]b"), vec!["a", TRANSITION, "b"]);
        assert_eq!(split_words("[VALUE]"), vec!["[", "value", "]"]);
    }

    #[test]
    fn empty_text() {
        assert!(tok().tokenize("").is_empty());
    }

    #[test]
    fn value_round_trip() {
        let t = tok();
        let ids = t.tokenize("London Kings Cross");
        assert_eq!(ids.len(), 3);
        assert_eq!(t.decode(&ids), "london kings cross");
    }

    #[test]
    fn oov_maps_to_unk() {
        assert_eq!(tok().tokenize("zebra"), vec![UNK_ID]);
    }

    #[test]
    fn punctuation_attaches() {
        let t = tok();
        let ids = t.tokenize("Hi, I'm fine.");
        assert_eq!(t.decode(&ids), "hi, i'm fine.");
        assert_eq!(t.tokenize(&t.decode(&ids)), ids);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let t = tok();
        t.save(&p).unwrap();
        let back = Tokenizer::load(&p).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.hash(), t.hash());
        assert_eq!(&back.vocab()[..8], &SPECIALS.map(String::from)[..]);
    }
}
