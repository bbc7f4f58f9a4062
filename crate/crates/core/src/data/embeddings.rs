use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// Word vectors of a common dimension. Zero vectors are never stored, so
/// every entry has a well-defined direction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }

    /// Inserts or replaces `word`; returns whether an entry was replaced.
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Format(format!(
                "vector for {word:?} has dimension {}, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("vector for {word:?} has a non-finite component")));
        }
        if vector.iter().all(|&v| v == 0.0) {
            return Err(Error::Format(format!("vector for {word:?} is all zeros")));
        }
        Ok(self.entries.insert(word.to_string(), vector).is_some())
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text)
}

/// Parses `word v1 ... vD` lines. A leading `count dim` header line, as
/// written by word2vec's text exporter, is skipped. Later duplicates replace
/// earlier ones with a warning.
pub fn parse_embeddings(text: &str) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    for (n, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        let Some(word) = tokens.next() else { continue };
        let rest: Vec<&str> = tokens.collect();
        if n == 0 && rest.len() == 1 && word.parse::<u64>().is_ok() && rest[0].parse::<u64>().is_ok() {
            continue;
        }
        let vector = rest
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: {t:?} is not a number (word {word:?})", n + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.is_empty() {
            return Err(Error::Format(format!("line {}: word {word:?} has no vector", n + 1)));
        }
        let table = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
        if table.insert(word, vector)? {
            log::warn!("embedding for {word:?} defined more than once; keeping line {}", n + 1);
        }
    }
    table.ok_or_else(|| Error::Empty("embedding file has no entries".into()))
}

pub fn save_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (word, v) in table.iter() {
        out.push_str(word);
        for x in v {
            write!(out, " {x}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let t = parse_embeddings("cat 1 0\ndog 0 1").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("dog"), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn duplicate_last_wins() {
        let t = parse_embeddings("cat 1 0\ncat 0 3\n").unwrap();
        assert_eq!(t.get("cat"), Some(&[0.0, 3.0][..]));
    }

    #[test]
    fn header_line_skipped() {
        let t = parse_embeddings("2 3\na 1 2 3\nb 3 2 1\n").unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn inconsistent_dimension_names_word() {
        let msg = parse_embeddings("cat 1 0\nhorse 1 0 2").unwrap_err().to_string();
        assert!(msg.contains("horse"), "{msg}");
    }

    #[test]
    fn zero_vector_rejected() {
        let msg = parse_embeddings("cat 1 0\nvoid 0 0").unwrap_err().to_string();
        assert!(msg.contains("void"), "{msg}");
    }
}
