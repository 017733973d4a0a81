use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{token_spans, words};

const DEFAULT_LEXICON: &str = include_str!("../../lexicons/sdoh.toml");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawTopic")]
pub struct Topic {
    pub key: String,
    pub name: String,
    pub keywords: Vec<String>,
    #[serde(skip)]
    set: HashSet<String>,
}

impl PartialEq for Topic {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key && self.name == other.name && self.keywords == other.keywords
    }
}

impl Topic {
    /// Lowercases and de-duplicates keywords, keeping first occurrences.
    pub fn new(key: impl Into<String>, name: impl Into<String>, keywords: &[&str]) -> Result<Self> {
        Self::from_parts(
            key.into(),
            name.into(),
            keywords.iter().map(|s| s.to_string()).collect(),
        )
    }

    fn from_parts(key: String, name: String, raw: Vec<String>) -> Result<Self> {
        let mut set = HashSet::new();
        let mut keywords = Vec::new();
        for word in raw {
            let word = word.trim().to_lowercase();
            let toks: Vec<String> = words(&word).collect();
            if toks.len() != 1 || toks[0] != word {
                return Err(Error::Config(format!(
                    "topic `{key}`: keyword {word:?} is not a single word"
                )));
            }
            if set.insert(word.clone()) {
                keywords.push(word);
            }
        }
        if keywords.is_empty() {
            return Err(Error::Config(format!("topic `{key}` has no keywords")));
        }
        Ok(Topic {
            key,
            name,
            keywords,
            set,
        })
    }

    pub fn matches(&self, word: &str) -> bool {
        self.set.contains(word)
    }

    /// True if any whole word of `text` is a keyword (case-insensitive).
    pub fn occurs_in(&self, text: &str) -> bool {
        words(text).any(|w| self.set.contains(&w))
    }

    /// Number of keyword occurrences in `text`.
    pub fn count_in(&self, text: &str) -> usize {
        words(text).filter(|w| self.set.contains(w)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLexicon")]
pub struct Lexicon {
    #[serde(rename = "topic")]
    pub topics: Vec<Topic>,
}

#[derive(Deserialize)]
struct RawLexicon {
    topic: Vec<RawTopic>,
}

impl TryFrom<RawTopic> for Topic {
    type Error = Error;

    fn try_from(raw: RawTopic) -> Result<Self> {
        Topic::from_parts(raw.key, raw.name, raw.keywords)
    }
}

impl TryFrom<RawLexicon> for Lexicon {
    type Error = Error;

    fn try_from(raw: RawLexicon) -> Result<Self> {
        let mut keys = HashSet::new();
        let mut topics = Vec::with_capacity(raw.topic.len());
        for t in raw.topic {
            if !keys.insert(t.key.clone()) {
                return Err(Error::Config(format!("duplicate topic key `{}`", t.key)));
            }
            topics.push(Topic::try_from(t)?);
        }
        if topics.is_empty() {
            return Err(Error::Config("lexicon has no topics".into()));
        }
        Ok(Lexicon { topics })
    }
}

#[derive(Deserialize)]
struct RawTopic {
    key: String,
    name: String,
    keywords: Vec<String>,
}

impl Lexicon {
    /// The eleven shipped social-determinants topics.
    pub fn sdoh() -> Self {
        Self::from_toml_str(DEFAULT_LEXICON).expect("shipped lexicon parses")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawLexicon =
            toml::from_str(text).map_err(|e| Error::Config(format!("lexicon: {e}")))?;
        Lexicon::try_from(raw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("lexicon serializes")
    }

    pub fn topic(&self, key: &str) -> Option<&Topic> {
        self.topics.iter().find(|t| t.key == key)
    }

    /// Drops the topics named in `keys`.
    pub fn without(&self, keys: &[String]) -> Self {
        Lexicon {
            topics: self
                .topics
                .iter()
                .filter(|t| !keys.contains(&t.key))
                .cloned()
                .collect(),
        }
    }

    /// Keywords of `key` that belong to no other topic.
    pub fn exclusive_keywords(&self, key: &str) -> Vec<&str> {
        let Some(topic) = self.topic(key) else {
            return Vec::new();
        };
        topic
            .keywords
            .iter()
            .filter(|w| self.topics.iter().all(|t| t.key == key || !t.matches(w)))
            .map(String::as_str)
            .collect()
    }

    pub fn contains_any(&self, word: &str) -> bool {
        self.topics.iter().any(|t| t.matches(word))
    }
}

/// Deletes every whole-word keyword of `topic` from `text`, case-insensitively.
///
/// Other tokens keep their order and original spelling. A kept token is
/// preceded by the separator that originally preceded it, and a text without
/// matches is returned unchanged.
pub fn remove_topic_words(text: &str, topic: &Topic) -> String {
    let spans: Vec<(usize, usize)> = token_spans(text).collect();
    let doomed: Vec<bool> = spans
        .iter()
        .map(|&(s, e)| topic.matches(&text[s..e].to_lowercase()))
        .collect();
    if !doomed.iter().any(|&d| d) {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut prev_end = 0;
    for (&(start, end), &drop) in spans.iter().zip(&doomed) {
        if !drop {
            if !out.is_empty() {
                out.push_str(&text[prev_end..start]);
            }
            out.push_str(&text[start..end]);
        }
        prev_end = end;
    }
    out
}
