//! Byte-level BPE tokenizer that reads a GPT-2/RoBERTa `vocab.json` and
//! `merges.txt` pair. Encoding only; the merge table is consumed as shipped.

use std::collections::HashMap;
use std::path::Path;

use fancy_regex::Regex;

use crate::error::{Error, Result};

const PRETOKENIZE: &str = r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

/// The reversible byte-to-printable-character map of GPT-2.
fn byte_alphabet() -> [char; 256] {
    let mut printable: Vec<u32> = (u32::from('!')..=u32::from('~'))
        .chain(u32::from('¡')..=u32::from('¬'))
        .chain(u32::from('®')..=u32::from('ÿ'))
        .collect();
    let mut table = ['\0'; 256];
    for &b in &printable {
        table[b as usize] = char::from_u32(b).unwrap();
    }
    let mut extra = 0;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            table[b as usize] = char::from_u32(256 + extra).unwrap();
            extra += 1;
            printable.push(b);
        }
    }
    table
}

#[derive(Debug, Clone)]
pub struct ByteBpe {
    vocab: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
    alphabet: [char; 256],
    pattern: Regex,
    pub bos: u32,
    pub eos: u32,
    pub pad: u32,
    pub unk: u32,
}

impl ByteBpe {
    pub fn new(vocab: HashMap<String, u32>, merges: &str) -> Result<Self> {
        let mut ranks = HashMap::new();
        for line in merges.lines().filter(|l| !l.starts_with("#version") && !l.trim().is_empty()) {
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| Error::Encoder(format!("malformed merge line `{line}`")))?;
            let next = ranks.len();
            ranks.entry((a.to_string(), b.to_string())).or_insert(next);
        }
        let special = |name: &str| {
            vocab
                .get(name)
                .copied()
                .ok_or_else(|| Error::Encoder(format!("vocabulary lacks special token {name}")))
        };
        Ok(Self {
            bos: special("<s>")?,
            eos: special("</s>")?,
            pad: special("<pad>")?,
            unk: special("<unk>")?,
            vocab,
            ranks,
            alphabet: byte_alphabet(),
            pattern: Regex::new(PRETOKENIZE).expect("static pattern"),
        })
    }

    pub fn from_files(vocab_json: &Path, merges_txt: &Path) -> Result<Self> {
        let vocab: HashMap<String, u32> = serde_json::from_slice(&std::fs::read(vocab_json)?)?;
        Self::new(vocab, &std::fs::read_to_string(merges_txt)?)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.values().map(|&v| v as usize + 1).max().unwrap_or(0)
    }

    fn bpe(&self, word: &str) -> Vec<String> {
        let mut parts: Vec<String> = word.chars().map(String::from).collect();
        while parts.len() > 1 {
            let best = parts
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((_, at)) = best else { break };
            let (a, b) = (parts[at].clone(), parts[at + 1].clone());
            let mut merged = Vec::with_capacity(parts.len());
            let mut i = 0;
            while i < parts.len() {
                if i + 1 < parts.len() && parts[i] == a && parts[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(parts[i].clone());
                    i += 1;
                }
            }
            parts = merged;
        }
        parts
    }

    /// Subword ids of `text` without boundary tokens.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = Vec::new();
        for piece in self.pattern.find_iter(text) {
            let piece = piece.map_err(|e| Error::Encoder(format!("pre-tokenizer failed: {e}")))?;
            let mapped: String = piece.as_str().bytes().map(|b| self.alphabet[b as usize]).collect();
            for token in self.bpe(&mapped) {
                ids.push(self.vocab.get(&token).copied().unwrap_or(self.unk));
            }
        }
        Ok(ids)
    }

    /// `<s> subwords </s>`, truncated so the whole sequence fits `max_len`.
    pub fn encode_with_boundaries(&self, text: &str, max_len: usize) -> Result<Vec<u32>> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        if max_len < 3 {
            return Err(Error::shape("max_len must leave room for boundary tokens"));
        }
        let mut body = self.encode(text)?;
        body.truncate(max_len - 2);
        let mut ids = Vec::with_capacity(body.len() + 2);
        ids.push(self.bos);
        ids.extend(body);
        ids.push(self.eos);
        Ok(ids)
    }
}
