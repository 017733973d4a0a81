use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::words;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
/// Number of reserved ids; ordinary tokens start here.
pub const RESERVED: u32 = 5;

const SPECIAL_TOKENS: [&str; RESERVED as usize] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from ordinary tokens in id order. Repeated tokens
    /// keep their first id; tokens containing whitespace are rejected.
    pub fn from_tokens(ordinary: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for token in ordinary {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid vocabulary token {token:?}")));
            }
            if index.contains_key(&token) {
                continue;
            }
            index.insert(token.clone(), tokens.len() as u32);
            tokens.push(token);
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED as usize
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Ordinary tokens in id order.
    pub fn ordinary_tokens(&self) -> &[String] {
        &self.tokens[RESERVED as usize..]
    }

    /// One ordinary token per line; the id is the line number plus the size
    /// of the reserved block.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for token in self.ordinary_tokens() {
            writeln!(out, "{token}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty vocabulary line".into(),
                });
            }
            tokens.push(line);
        }
        Self::from_tokens(tokens)
    }
}

/// Counts tokens over `texts`, keeps those seen at least `min_count` times,
/// orders by descending frequency (ties lexicographic) and caps the total
/// vocabulary size, reserved ids included, at `max_size`.
pub fn build_vocab<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    min_count: usize,
    max_size: usize,
) -> Result<Vocabulary> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for word in words(text) {
            *counts.entry(word).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::InvalidCorpus("no tokens to build a vocabulary from".into()));
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count.max(1))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size.saturating_sub(RESERVED as usize));
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}
