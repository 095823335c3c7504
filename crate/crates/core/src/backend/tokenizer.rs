use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

const CONTINUATION: &str = "##";
const PUNCTUATION: &[char] = &['.', ',', '?', '!', ';', ':'];

pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<u32>;

    fn vocab_size(&self) -> usize;

    fn id_of(&self, token: &str) -> Option<u32>;

    fn token(&self, id: u32) -> Option<&str>;

    fn unk_id(&self) -> u32;

    fn begin_id(&self) -> u32;

    fn end_id(&self) -> u32;

    fn mask_id(&self) -> Option<u32>;
}

/// Lowercasing whitespace tokenizer with greedy longest-match subword
/// fallback (`##` continuation pieces) and BERT-style special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPieceTokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
}

impl WordPieceTokenizer {
    /// Special tokens take ids 0..4 (`[UNK]`, `[CLS]`, `[SEP]`, `[MASK]`),
    /// followed by `words` in order. Duplicates are ignored.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut tok = WordPieceTokenizer {
            vocab: Vec::new(),
            index: HashMap::new(),
        };
        for w in [UNK, CLS, SEP, MASK] {
            tok.push(w);
        }
        for w in words {
            tok.push(w.as_ref());
        }
        tok
    }

    fn push(&mut self, word: &str) {
        if !self.index.contains_key(word) {
            self.index.insert(word.to_string(), self.vocab.len() as u32);
            self.vocab.push(word.to_string());
        }
    }

    /// Vocabulary of at most `capacity` entries: specials, then `required`,
    /// then the most frequent words of `texts` (ties broken alphabetically).
    pub fn from_corpus<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        required: &[&str],
        capacity: usize,
    ) -> Result<Self> {
        let mut tok = Self::new(required.iter().map(|w| w.to_lowercase()));
        if tok.vocab.len() > capacity {
            return Err(Error::Backend(format!(
                "{} required tokens exceed vocabulary capacity {capacity}",
                tok.vocab.len()
            )));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for w in pre_tokenize(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (w, _) in ranked {
            if tok.vocab.len() >= capacity {
                break;
            }
            tok.push(&w);
        }
        Ok(tok)
    }

    pub fn words(&self) -> &[String] {
        &self.vocab
    }

    fn word_ids(&self, word: &str, out: &mut Vec<u32>) {
        if let Some(&id) = self.index.get(word) {
            out.push(id);
            return;
        }
        let start_len = out.len();
        let mut rest = word;
        let mut first = true;
        while !rest.is_empty() {
            let mut found = None;
            for end in (1..=rest.len()).rev().filter(|&e| rest.is_char_boundary(e)) {
                let piece = &rest[..end];
                let key = if first {
                    piece.to_string()
                } else {
                    format!("{CONTINUATION}{piece}")
                };
                if let Some(&id) = self.index.get(&key) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    out.push(id);
                    rest = &rest[end..];
                    first = false;
                }
                None => {
                    out.truncate(start_len);
                    out.push(self.unk_id());
                    return;
                }
            }
        }
    }
}

/// Lowercases, splits on whitespace, and separates sentence punctuation.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let mut word = String::new();
        for c in raw.chars().flat_map(char::to_lowercase) {
            if PUNCTUATION.contains(&c) {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            } else {
                word.push(c);
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

impl Tokenizer for WordPieceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for w in pre_tokenize(text) {
            self.word_ids(&w, &mut ids);
        }
        ids
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    fn unk_id(&self) -> u32 {
        0
    }

    fn begin_id(&self) -> u32 {
        1
    }

    fn end_id(&self) -> u32 {
        2
    }

    fn mask_id(&self) -> Option<u32> {
        Some(3)
    }
}
