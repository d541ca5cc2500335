//! Tweet corpora in the shared-task TSV schema.
//!
//! A corpus file is UTF-8, tab-separated, with a mandatory header. Labeled
//! corpora carry three columns, blind test corpora two:
//!
//! ```text
//! indexN<TAB>TweetText<TAB>label        labeled (train/dev)
//! indexN<TAB>TweetText                  blind (no label column at all)
//! ```
//!
//! Header names are matched case-sensitively. The `label` column admits
//! exactly the lowercase strings `human` and `machine`. Tabs, newlines,
//! carriage returns and backslashes inside a field are escaped as `\t`,
//! `\n`, `\r` and `\\`, so parse ∘ serialize round-trips any valid corpus.
//! Labeling is all-or-nothing: a corpus either labels every record or none.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Who produced an annotation: a human domain expert or an LLM.
///
/// The class index mapping is fixed: `Human` = 0, `Machine` = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationProvenance {
    Human,
    Machine,
}

impl AnnotationProvenance {
    /// Fixed class index: Human = 0, Machine = 1.
    pub fn class_index(self) -> usize {
        match self {
            AnnotationProvenance::Human => 0,
            AnnotationProvenance::Machine => 1,
        }
    }

    pub fn from_class_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(AnnotationProvenance::Human),
            1 => Some(AnnotationProvenance::Machine),
            _ => None,
        }
    }

    /// Serialized form: `"human"` or `"machine"`.
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationProvenance::Human => "human",
            AnnotationProvenance::Machine => "machine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "human" => Some(AnnotationProvenance::Human),
            "machine" => Some(AnnotationProvenance::Machine),
            _ => None,
        }
    }
}

impl fmt::Display for AnnotationProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Corpus language tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Spanish,
    English,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::Spanish => "spanish",
            Language::English => "english",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spanish" => Some(Language::Spanish),
            "english" => Some(Language::English),
            _ => None,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One corpus row: opaque identifier, tweet text, optional provenance label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub index: String,
    pub text: String,
    pub label: Option<AnnotationProvenance>,
}

/// An ordered sequence of records plus the language they are written in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    records: Vec<TweetRecord>,
    language: Language,
}

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("missing or malformed header{}", match .found {
        Some(h) => format!(": got {h:?}"),
        None => String::from(" (empty input)"),
    })]
    MissingHeader { found: Option<String> },
    #[error("invalid label {label:?} on line {line} (expected \"human\" or \"machine\")")]
    InvalidLabel { line: usize, label: String },
    #[error("duplicate index {index:?} on line {line}")]
    DuplicateIndex { line: usize, index: String },
    #[error("empty text on line {line}")]
    EmptyText { line: usize },
    #[error("malformed row on line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("mixed labeling: {labeled} of {total} records carry a label (must be all or none)")]
    MixedLabeling { labeled: usize, total: usize },
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
    #[error("{got} predictions for {expected} records")]
    LengthMismatch { expected: usize, got: usize },
    #[error("split would leave an empty part ({train} train / {dev} dev records)")]
    DegenerateSplit { train: usize, dev: usize },
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("corpus must be fully labeled to split (record {index:?} has no label)")]
    UnlabeledRecord { index: String },
}

pub const HEADER_LABELED: &str = "indexN\tTweetText\tlabel";
pub const HEADER_BLIND: &str = "indexN\tTweetText";
pub const PREDICTIONS_HEADER: &str = "indexN\tlabel";

impl Corpus {
    /// Builds a corpus, enforcing unique indices, non-empty texts, and
    /// all-or-nothing labeling.
    pub fn new(records: Vec<TweetRecord>, language: Language) -> Result<Self, CorpusError> {
        let mut seen = std::collections::HashSet::new();
        for (i, record) in records.iter().enumerate() {
            if record.text.trim().is_empty() {
                return Err(CorpusError::EmptyText { line: i + 2 });
            }
            if !seen.insert(record.index.as_str()) {
                return Err(CorpusError::DuplicateIndex {
                    line: i + 2,
                    index: record.index.clone(),
                });
            }
        }
        let labeled = records.iter().filter(|r| r.label.is_some()).count();
        if labeled != 0 && labeled != records.len() {
            return Err(CorpusError::MixedLabeling {
                labeled,
                total: records.len(),
            });
        }
        Ok(Corpus { records, language })
    }

    pub fn records(&self) -> &[TweetRecord] {
        &self.records
    }

    pub fn language(&self) -> Language {
        self.language
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// True when every record carries a label (an empty corpus counts).
    pub fn is_labeled(&self) -> bool {
        self.records.iter().all(|r| r.label.is_some())
    }

    pub fn texts(&self) -> Vec<String> {
        self.records.iter().map(|r| r.text.clone()).collect()
    }

    /// Per-class record counts, indexed by class index.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0usize; 2];
        for r in &self.records {
            if let Some(label) = r.label {
                counts[label.class_index()] += 1;
            }
        }
        counts
    }
}

pub(crate) fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            other => out.push(other),
        }
    }
    out
}

/// Reverses `escape_field`; the error is a human-readable reason.
pub(crate) fn unescape_field(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(c) => return Err(format!("invalid escape sequence \\{c}")),
            None => return Err(String::from("dangling backslash at end of field")),
        }
    }
    Ok(out)
}

/// Parses a TSV corpus from a UTF-8 byte stream.
///
/// The first line must be exactly the labeled or blind header; a blind
/// header yields a corpus with no labels. Every data line becomes one
/// record, in file order; rows are never silently dropped.
pub fn parse_corpus(bytes: &[u8], language: Language) -> Result<Corpus, CorpusError> {
    let content = std::str::from_utf8(bytes).map_err(|_| CorpusError::InvalidUtf8)?;
    let mut lines = content.split('\n').enumerate();

    let (_, header) = lines.next().ok_or(CorpusError::MissingHeader { found: None })?;
    let header = header.strip_suffix('\r').unwrap_or(header);
    let labeled = match header {
        HEADER_LABELED => true,
        HEADER_BLIND => false,
        "" => return Err(CorpusError::MissingHeader { found: None }),
        other => {
            return Err(CorpusError::MissingHeader {
                found: Some(other.to_string()),
            })
        }
    };
    let expected_fields = if labeled { 3 } else { 2 };

    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, raw_line) in lines {
        let line_no = i + 1; // 1-based line number in the file
        let raw_line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if raw_line.is_empty() {
            continue; // trailing newline or blank separator line
        }
        let fields: Vec<&str> = raw_line.split('\t').collect();
        if fields.len() != expected_fields {
            return Err(CorpusError::MalformedRow {
                line: line_no,
                reason: format!("expected {expected_fields} fields, got {}", fields.len()),
            });
        }
        let unescape = |field| {
            unescape_field(field).map_err(|reason| CorpusError::MalformedRow { line: line_no, reason })
        };
        let index = unescape(fields[0])?;
        let text = unescape(fields[1])?;
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText { line: line_no });
        }
        if !seen.insert(index.clone()) {
            return Err(CorpusError::DuplicateIndex { line: line_no, index });
        }
        let label = if labeled {
            match AnnotationProvenance::parse(fields[2]) {
                Some(l) => Some(l),
                None => {
                    return Err(CorpusError::InvalidLabel {
                        line: line_no,
                        label: fields[2].to_string(),
                    })
                }
            }
        } else {
            None
        };
        records.push(TweetRecord { index, text, label });
    }

    Corpus::new(records, language)
}

/// Serializes a corpus back to the TSV schema `parse_corpus` reads.
pub fn serialize_corpus(corpus: &Corpus) -> String {
    let labeled = corpus.is_labeled() && !corpus.is_empty();
    let mut out = String::new();
    out.push_str(if labeled { HEADER_LABELED } else { HEADER_BLIND });
    out.push('\n');
    for record in corpus.records() {
        out.push_str(&escape_field(&record.index));
        out.push('\t');
        out.push_str(&escape_field(&record.text));
        if labeled {
            out.push('\t');
            out.push_str(record.label.expect("labeled corpus").as_str());
        }
        out.push('\n');
    }
    out
}

/// Deterministic stratified split into (train, dev).
///
/// Per class, `round(train_fraction · n_class)` records go to train, so each
/// split's class ratio stays within one record of the corpus ratio. Which
/// records go where is decided by a seeded shuffle; record order inside each
/// part preserves corpus order. The two parts are disjoint and reassemble to
/// the input.
pub fn split_corpus(
    corpus: &Corpus,
    train_fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus), CorpusError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(train_fraction));
    }
    for record in corpus.records() {
        if record.label.is_none() {
            return Err(CorpusError::UnlabeledRecord {
                index: record.index.clone(),
            });
        }
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut train_positions: Vec<usize> = Vec::new();
    let mut dev_positions: Vec<usize> = Vec::new();
    for class in [AnnotationProvenance::Human, AnnotationProvenance::Machine] {
        let mut positions: Vec<usize> = corpus
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == Some(class))
            .map(|(i, _)| i)
            .collect();
        positions.shuffle(&mut rng);
        let take = (train_fraction * positions.len() as f64 + 0.5).floor() as usize;
        train_positions.extend(&positions[..take]);
        dev_positions.extend(&positions[take..]);
    }
    train_positions.sort_unstable();
    dev_positions.sort_unstable();

    if train_positions.is_empty() || dev_positions.is_empty() {
        return Err(CorpusError::DegenerateSplit {
            train: train_positions.len(),
            dev: dev_positions.len(),
        });
    }

    let pick = |positions: &[usize]| {
        let records = positions
            .iter()
            .map(|&i| corpus.records()[i].clone())
            .collect();
        Corpus::new(records, corpus.language())
    };
    Ok((pick(&train_positions)?, pick(&dev_positions)?))
}

/// Emits the prediction file: header `indexN<TAB>label`, one row per record
/// in corpus order, labels serialized lowercase.
pub fn write_predictions(
    corpus: &Corpus,
    predictions: &[AnnotationProvenance],
) -> Result<String, CorpusError> {
    if predictions.len() != corpus.len() {
        return Err(CorpusError::LengthMismatch {
            expected: corpus.len(),
            got: predictions.len(),
        });
    }
    let mut out = String::from(PREDICTIONS_HEADER);
    out.push('\n');
    for (record, prediction) in corpus.records().iter().zip(predictions) {
        out.push_str(&escape_field(&record.index));
        out.push('\t');
        out.push_str(prediction.as_str());
        out.push('\n');
    }
    Ok(out)
}
