use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use crate::error::{Error, Result};

/// Static word vectors, e.g. GloVe.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    lowercase_keys: bool,
    /// Distinct words in the source file, including ones dropped by a
    /// vocabulary filter.
    source_vocabulary: usize,
    duplicates: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize, lowercase_keys: bool) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
            lowercase_keys,
            source_vocabulary: 0,
            duplicates: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn lowercase_keys(&self) -> bool {
        self.lowercase_keys
    }

    pub fn source_vocabulary(&self) -> usize {
        self.source_vocabulary
    }

    /// Repeated words in the source; the first occurrence was kept.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Format(format!(
                "vector for `{word}` has {} components, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if self.vectors.contains_key(word) {
            return Ok(false);
        }
        self.vectors.insert(word.to_string(), vector);
        Ok(true)
    }

    fn key<'a>(&self, token: &'a str) -> std::borrow::Cow<'a, str> {
        if self.lowercase_keys {
            std::borrow::Cow::Owned(token.to_lowercase())
        } else {
            std::borrow::Cow::Borrowed(token)
        }
    }

    /// Stored vector, if the (case-folded) token is in the vocabulary.
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(self.key(token).as_ref()).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.get(token).is_some()
    }

    /// Stored vector, or zeros for an out-of-vocabulary token.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        self.get(token)
            .map_or_else(|| vec![0.0; self.dim], <[f64]>::to_vec)
    }
}

/// Parse a whole GloVe text file held in memory.
pub fn load_glove(content: &str) -> Result<EmbeddingTable> {
    load_glove_reader(content.as_bytes(), None)
}

/// Stream a GloVe file (`word v1 … vd` per line). With `vocabulary`, only
/// those words are kept (matched after lowercasing), which bounds memory for
/// large files; dimension checks still cover every line.
pub fn load_glove_reader<R: BufRead>(
    reader: R,
    vocabulary: Option<&HashSet<String>>,
) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    let mut seen: HashSet<String> = HashSet::new();
    let mut distinct = 0usize;
    let mut duplicates = 0usize;
    for (n, line) in reader.lines().enumerate() {
        let n = n + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("non-empty line");
        let values: Vec<&str> = parts.collect();
        let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len(), true));
        if values.is_empty() || values.len() != t.dim {
            return Err(Error::Format(format!(
                "embedding line {n}: expected {} values, found {}",
                t.dim,
                values.len()
            )));
        }
        if !seen.insert(word.to_string()) {
            duplicates += 1;
            continue;
        }
        distinct += 1;
        if vocabulary.is_some_and(|v| !v.contains(&word.to_lowercase())) {
            continue;
        }
        let vector = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| Error::Format(format!("embedding line {n}: non-numeric value")))?;
        t.insert(word, vector)?;
    }
    let mut table =
        table.ok_or_else(|| Error::Format("embedding file contains no vectors".into()))?;
    table.source_vocabulary = distinct;
    table.duplicates = duplicates;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_line() {
        let t = load_glove("the 0.1 0.2 0.3").unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.lookup("the"), [0.1, 0.2, 0.3]);
    }

    #[test]
    fn lookup_folds_case_and_zeroes_unknown_words() {
        let t = load_glove("cloning 1 2\nis 3 4\n").unwrap();
        assert_eq!(t.lookup("Cloning"), [1.0, 2.0]);
        assert_eq!(t.lookup("zzqqy"), [0.0, 0.0]);
        assert!(!t.contains("zzqqy"));
    }

    #[test]
    fn first_duplicate_wins() {
        let t = load_glove("a 1 1\nb 2 2\na 3 3\n").unwrap();
        assert_eq!(t.lookup("a"), [1.0, 1.0]);
        assert_eq!((t.len(), t.duplicates(), t.source_vocabulary()), (2, 1, 2));
    }

    #[test]
    fn inconsistent_dimension_names_the_line() {
        let err = load_glove("a 1 2 3\nb 1 2\n").unwrap_err();
        assert!(matches!(&err, Error::Format(m) if m.contains("line 2")), "{err}");
        assert!(load_glove("a 1 x\n").is_err());
        assert!(load_glove("").is_err());
    }

    #[test]
    fn vocabulary_filter_keeps_counts() {
        let vocab: HashSet<String> = ["b".to_string()].into();
        let t = load_glove_reader("a 1\nb 2\nc 3\n".as_bytes(), Some(&vocab)).unwrap();
        assert_eq!((t.len(), t.source_vocabulary()), (1, 3));
        assert_eq!(t.lookup("B"), [2.0]);
    }
}
