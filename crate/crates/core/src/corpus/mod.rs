//! SARC-style corpus ingestion, vocabulary and class-balanced splits.
//!
//! Records arrive as line-delimited JSON, one linearized Reddit sequence per
//! line: the ancestor chain, the response being classified, the response
//! author, the subreddit and a 0/1 sarcasm label.

mod split;
mod vocab;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub use split::{balanced_split, ClassCounts, DatasetSplit, SplitManifest};
pub use vocab::{build_vocab, tokenize, tokenize_pad, TokenSequence, Vocabulary, PAD, UNK};

pub const DEFAULT_MAX_LEN: usize = 100;

/// Binary sarcasm label. Class index 0 is non-sarcastic, 1 is sarcastic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NonSarcastic,
    Sarcastic,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::NonSarcastic, Label::Sarcastic];

    pub fn index(self) -> usize {
        match self {
            Label::NonSarcastic => 0,
            Label::Sarcastic => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::NonSarcastic),
            1 => Some(Label::Sarcastic),
            _ => None,
        }
    }

    /// +1 for sarcastic, -1 otherwise (SVM convention).
    pub fn sign(self) -> f64 {
        match self {
            Label::Sarcastic => 1.0,
            Label::NonSarcastic => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Sarcastic => "sarcastic",
            Label::NonSarcastic => "non-sarcastic",
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.index() as u8)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_index(v as usize)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {v}")))
    }
}

/// One linearized Reddit sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceExample {
    pub id: String,
    pub author: String,
    #[serde(rename = "subreddit")]
    pub forum: String,
    pub ancestors: Vec<String>,
    pub response: String,
    pub label: Label,
}

const REQUIRED_FIELDS: [&str; 6] = ["id", "author", "subreddit", "ancestors", "response", "label"];

fn parse_line(line: &str, line_no: usize) -> Result<SequenceExample> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::Parse {
        line: line_no,
        message: "record is not a JSON object".into(),
    })?;
    for field in REQUIRED_FIELDS {
        if !obj.contains_key(field) {
            return Err(Error::Schema {
                line: line_no,
                message: format!("missing required field `{field}`"),
            });
        }
    }
    let example: SequenceExample = serde_json::from_value(value).map_err(|e| Error::Schema {
        line: line_no,
        message: e.to_string(),
    })?;
    if example.response.trim().is_empty() {
        return Err(Error::Schema {
            line: line_no,
            message: "`response` is empty".into(),
        });
    }
    Ok(example)
}

/// Parses line-delimited SARC records, preserving order. Blank lines are skipped;
/// reported line numbers are 1-based.
pub fn parse_sarc<R: BufRead>(reader: R) -> Result<Vec<SequenceExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn write_sarc<W: Write>(mut writer: W, examples: &[SequenceExample]) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut writer, ex)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_sarc_file(path: &std::path::Path) -> Result<Vec<SequenceExample>> {
    let file = std::fs::File::open(path)?;
    parse_sarc(std::io::BufReader::new(file))
}

pub fn write_sarc_file(path: &std::path::Path, examples: &[SequenceExample]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_sarc(&mut w, examples)?;
    w.flush()?;
    Ok(())
}

/// Per-class response statistics over whitespace tokens, before padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub non_sarcastic: usize,
    pub sarcastic: usize,
    /// `None` when the class has no examples.
    pub mean_words_non_sarcastic: Option<f64>,
    pub mean_words_sarcastic: Option<f64>,
    pub sarcastic_proportion: f64,
}

pub fn corpus_stats(examples: &[SequenceExample]) -> Result<CorpusStats> {
    if examples.is_empty() {
        return Err(Error::data("corpus_stats on empty input"));
    }
    let mut counts = [0usize; 2];
    let mut words = [0usize; 2];
    for ex in examples {
        let c = ex.label.index();
        counts[c] += 1;
        words[c] += ex.response.split_whitespace().count();
    }
    let mean = |c: usize| (counts[c] > 0).then(|| words[c] as f64 / counts[c] as f64);
    Ok(CorpusStats {
        non_sarcastic: counts[0],
        sarcastic: counts[1],
        mean_words_non_sarcastic: mean(0),
        mean_words_sarcastic: mean(1),
        sarcastic_proportion: counts[1] as f64 / examples.len() as f64,
    })
}
