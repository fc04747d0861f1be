//! Labeled symbol sequences, one `label<TAB>symbols` line each.

use std::collections::HashMap;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSequence {
    pub symbols: Vec<usize>,
    pub label: usize,
}

/// Characters in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocabulary {
    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Self { chars, index }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    fn id_or_insert(&mut self, c: char) -> usize {
        *self.index.entry(c).or_insert_with(|| {
            self.chars.push(c);
            self.chars.len() - 1
        })
    }

    /// Maps a string through the vocabulary; unknown symbols are an error.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.id(c)
                    .ok_or_else(|| Error::Parameter(format!("symbol {c:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.chars[i]).collect()
    }
}

/// Parses labeled lines. Blank lines are skipped; a line without a tab, with
/// a non-integer label or with no symbols is an error naming its line number.
pub fn parse_labeled(text: &str, path: &Path) -> Result<(Vec<LabeledSequence>, Vocabulary)> {
    let mut vocab = Vocabulary::default();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let (label, symbols) = line
            .split_once('\t')
            .ok_or_else(|| err("expected label<TAB>symbols".into()))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| err(format!("label {label:?} is not a class index")))?;
        if symbols.is_empty() {
            return Err(err("empty sequence".into()));
        }
        let symbols = symbols.chars().map(|c| vocab.id_or_insert(c)).collect();
        out.push(LabeledSequence { symbols, label });
    }
    Ok((out, vocab))
}

pub fn load_labeled(path: &Path) -> Result<(Vec<LabeledSequence>, Vocabulary)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labeled(&text, path)
}

pub fn write_labeled(path: &Path, data: &[LabeledSequence], vocab: &Vocabulary) -> Result<()> {
    let mut text = String::new();
    for seq in data {
        text.push_str(&seq.label.to_string());
        text.push('\t');
        text.push_str(&vocab.decode(&seq.symbols));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
