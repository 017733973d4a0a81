//! Whole-word tokenization, vocabulary building and sequence encoding.
//!
//! Words are maximal runs of alphanumeric characters, lowercased. Every
//! other non-whitespace character is a token of its own.

mod mlm;
mod vocab;

pub use mlm::{make_mlm_instances, split_segments, MlmInstance, NspLabel, IGNORE_LABEL};
pub use vocab::{build_vocab, Vocabulary, CLS, MASK, PAD, RESERVED, SEP, UNK};

use serde::{Deserialize, Serialize};

/// Iterates over the raw (not yet lowercased) tokens of `text` together with
/// their byte spans.
pub fn token_spans(text: &str) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut chars = text.char_indices().peekable();
    std::iter::from_fn(move || loop {
        let (start, c) = chars.next()?;
        if c.is_whitespace() {
            continue;
        }
        if !c.is_alphanumeric() {
            return Some((start, start + c.len_utf8()));
        }
        let mut end = start + c.len_utf8();
        while let Some(&(i, next)) = chars.peek() {
            if !next.is_alphanumeric() {
                break;
            }
            end = i + next.len_utf8();
            chars.next();
        }
        return Some((start, end));
    })
}

/// Lowercased tokens of `text`.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    token_spans(text).map(move |(s, e)| text[s..e].to_lowercase())
}

/// A padded, bounded-length sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    /// Number of real (non-PAD) tokens.
    pub len: usize,
}

impl TokenSequence {
    /// The real tokens, without padding.
    pub fn real_ids(&self) -> &[u32] {
        &self.ids[..self.len]
    }

    /// Builds an unpadded sequence from raw ids.
    pub fn from_ids(ids: Vec<u32>) -> Self {
        let len = ids.len();
        TokenSequence {
            attention_mask: vec![1; len],
            ids,
            len,
        }
    }
}

/// Encodes `text` as `[CLS] tokens... [SEP]`, truncated to `max_len` and
/// padded up to `max_len`.
pub fn encode(vocab: &Vocabulary, text: &str, max_len: usize) -> TokenSequence {
    assert!(max_len >= 2, "max_len must leave room for CLS and SEP");
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(words(text).take(max_len - 2).map(|w| vocab.lookup(&w)));
    ids.push(SEP);
    let len = ids.len();
    let mut attention_mask = vec![1u8; len];
    ids.resize(max_len, PAD);
    attention_mask.resize(max_len, 0);
    TokenSequence {
        ids,
        attention_mask,
        len,
    }
}

/// Maps ids back to tokens, dropping special tokens.
pub fn decode(vocab: &Vocabulary, ids: &[u32]) -> Vec<String> {
    ids.iter()
        .filter(|&&id| id >= RESERVED)
        .map(|&id| vocab.token(id).unwrap_or("[UNK]").to_string())
        .collect()
}
