use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::SequenceExample;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;

/// Lowercased whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Token to index map. Index 0 is padding, 1 is unknown; stored tokens start at 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    min_freq: usize,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

#[derive(Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    min_freq: usize,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::from_tokens(r.tokens, r.min_freq)
    }
}

impl Vocabulary {
    /// Tokens are ordered by descending frequency, ties lexicographically.
    pub fn fit<'a, I>(texts: I, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut freq: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *freq.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> =
            freq.into_iter().filter(|(_, c)| *c >= min_freq.max(1)).collect();
        if kept.is_empty() {
            return Err(Error::EmptyVocabulary { min_freq });
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_tokens(kept.into_iter().map(|(t, _)| t).collect(), min_freq))
    }

    pub fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32 + 2))
            .collect();
        Self { tokens, min_freq, index }
    }

    /// Size including the two reserved indices.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Index of a token, if stored.
    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK)
    }
}

/// Fits a vocabulary over the response field of `examples`.
pub fn build_vocab(examples: &[SequenceExample], min_freq: usize) -> Result<Vocabulary> {
    if examples.is_empty() {
        return Err(Error::data("build_vocab on empty example list"));
    }
    Vocabulary::fit(examples.iter().map(|e| e.response.as_str()), min_freq)
}

/// Fixed-length id sequence; entries at or beyond `true_length` are [`PAD`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub true_length: usize,
}

impl TokenSequence {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.ids[..self.true_length]
    }

    /// Pads (or right-truncates) an id list to `max_len`.
    pub fn from_ids(ids: Vec<u32>, max_len: usize) -> Result<Self> {
        Self::from_ids_with_pad(ids, max_len, PAD)
    }

    /// As [`TokenSequence::from_ids`] for tokenizers whose padding id is not [`PAD`].
    pub fn from_ids_with_pad(mut ids: Vec<u32>, max_len: usize, pad: u32) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyText);
        }
        if max_len == 0 {
            return Err(Error::shape("max_len must be positive"));
        }
        ids.truncate(max_len);
        let true_length = ids.len();
        ids.resize(max_len, pad);
        Ok(Self { ids, true_length })
    }
}

/// Lowercase whitespace tokenization, right truncation at `max_len`, post-padding with [`PAD`].
pub fn tokenize_pad(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    let ids: Vec<u32> = tokenize(text).iter().map(|t| vocab.id(t)).collect();
    TokenSequence::from_ids(ids, max_len)
}
