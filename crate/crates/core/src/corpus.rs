//! Vocabulary and corpus files, and a synthetic two-mode corpus.
//!
//! Vocabulary: UTF-8 text, one token per line, id = 0-based line number.
//! Corpus: one JSON object per line, `{"context": 0, "target": ["A", "B"]}`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chart::Sentence;
use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            let line = id + 1;
            if tok.is_empty() || tok.contains(['\n', '\r']) {
                return Err(Error::Parse {
                    line,
                    message: "tokens must be non-empty single-line strings".into(),
                });
            }
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate token {tok:?}"),
                });
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::to_owned).collect())
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps token strings to ids; `line` is used in the error.
    pub fn encode<S: AsRef<str>>(&self, words: &[S], line: usize) -> Result<Vec<usize>> {
        words
            .iter()
            .map(|w| {
                self.id(w.as_ref()).ok_or_else(|| Error::UnknownToken {
                    line,
                    token: w.as_ref().to_owned(),
                })
            })
            .collect()
    }

    /// Token strings for ids; unknown ids render as their number.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).map_or_else(|| i.to_string(), str::to_owned))
            .collect()
    }
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocab> {
    Vocab::parse(&fs::read_to_string(path)?)
}

pub fn save_vocab(path: impl AsRef<Path>, vocab: &Vocab) -> Result<()> {
    write_atomic(path, vocab.to_text().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    /// Stand-in for the source sentence.
    pub context: u64,
    pub tokens: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    context: u64,
    target: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub records: Vec<Record>,
    pub vocab: Vocab,
}

impl Corpus {
    /// Parses one record per line. Blank lines are rejected so that line
    /// numbers and record indices agree.
    pub fn parse(text: &str, vocab: Vocab) -> Result<Self> {
        let mut records = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let rec: RecordLine = serde_json::from_str(raw).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            if rec.target.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "empty target".into(),
                });
            }
            records.push(Record {
                context: rec.context,
                tokens: vocab.encode(&rec.target, line)?,
            });
        }
        Ok(Self { records, vocab })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let line = RecordLine {
                context: r.context,
                target: self.vocab.decode(&r.tokens),
            };
            out.push_str(&serde_json::to_string(&line).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Targets as sentences, in corpus order.
    pub fn sentences(&self) -> Result<Vec<Sentence>> {
        self.records
            .iter()
            .map(|r| Sentence::new(r.tokens.clone(), self.vocab.len()))
            .collect()
    }
}

pub fn load_corpus(path: impl AsRef<Path>, vocab: Vocab) -> Result<Corpus> {
    Corpus::parse(&fs::read_to_string(path)?, vocab)
}

pub fn save_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    write_atomic(path, corpus.to_text().as_bytes())
}

/// `n_each` copies of two target sequences under context 0, shuffled by
/// `seed`.
pub fn make_bimodal<S: AsRef<str>>(
    vocab: Vocab,
    mode_a: &[S],
    mode_b: &[S],
    n_each: usize,
    seed: u64,
) -> Result<Corpus> {
    if mode_a.is_empty() || mode_b.is_empty() {
        return Err(Error::InvalidConfig("both modes must be non-empty".into()));
    }
    let a = vocab.encode(mode_a, 0)?;
    let b = vocab.encode(mode_b, 0)?;
    let mut records: Vec<Record> = std::iter::repeat_n(a, n_each)
        .chain(std::iter::repeat_n(b, n_each))
        .map(|tokens| Record { context: 0, tokens })
        .collect();
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Corpus { records, vocab })
}
