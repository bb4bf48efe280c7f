//! Per-token input vectors: static word tables, precomputed contextual
//! vectors, and their concatenation.

mod glove;
mod precomputed;

use std::collections::HashSet;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::LabeledSequence;
use crate::error::{Error, Result};
use crate::numeric::BatchTensor;

pub use glove::{load_glove, load_glove_reader, EmbeddingTable};
pub use precomputed::{
    load_precomputed, PrecomputedStore, VectorKey, PRECOMPUTED_MAGIC, PRECOMPUTED_VERSION,
};

/// Input widths of the published configurations.
pub const GLOVE_DIM: usize = 300;
pub const BERT_DIM: usize = 3072;
pub const FLAIR_STACKED_DIM: usize = 4196;

/// Name of a published configuration with this total width, if any.
pub fn known_configuration(dim: usize) -> Option<&'static str> {
    match dim {
        GLOVE_DIM => Some("glove"),
        BERT_DIM => Some("bert"),
        FLAIR_STACKED_DIM => Some("flair+glove"),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Glove,
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub path: PathBuf,
}

/// Ordered input sources and the total width they must add up to.
///
/// ```toml
/// expected_dim = 305
///
/// [[source]]
/// kind = "glove"
/// path = "glove.6B.300d.txt"
///
/// [[source]]
/// kind = "precomputed"
/// path = "extra.vec"
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub expected_dim: usize,
    #[serde(rename = "source")]
    pub sources: Vec<SourceSpec>,
}

impl EmbeddingSpec {
    pub fn parse(content: &str) -> Result<Self> {
        let spec: EmbeddingSpec = toml::from_str(content)
            .map_err(|e| Error::Config(format!("embedding spec: {e}")))?;
        if spec.sources.is_empty() {
            return Err(Error::Config("embedding spec lists no sources".into()));
        }
        Ok(spec)
    }

    /// Read a spec file; relative source paths are resolved against its
    /// directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut spec = Self::parse(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut spec.sources {
            if s.path.is_relative() {
                s.path = base.join(&s.path);
            }
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("embedding spec serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Glove(EmbeddingTable),
    Precomputed(PrecomputedStore),
}

impl Source {
    pub fn dim(&self) -> usize {
        match self {
            Source::Glove(t) => t.dim(),
            Source::Precomputed(s) => s.dim(),
        }
    }
}

/// Out-of-vocabulary counts over static-table lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OovStats {
    pub lookups: usize,
    pub misses: usize,
}

impl OovStats {
    pub fn rate(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.misses as f64 / self.lookups as f64
        }
    }
}

/// Loaded sources, ready to turn sequences into model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    expected_dim: usize,
    sources: Vec<Source>,
}

impl Embedder {
    /// Combine sources in order; their widths must sum to `expected_dim`.
    pub fn new(expected_dim: usize, sources: Vec<Source>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Config("no embedding sources".into()));
        }
        let dims: Vec<usize> = sources.iter().map(Source::dim).collect();
        let total: usize = dims.iter().sum();
        if total != expected_dim {
            return Err(Error::Config(format!(
                "embedding sources have widths {dims:?} (total {total}), expected {expected_dim}"
            )));
        }
        Ok(Self {
            expected_dim,
            sources,
        })
    }

    /// Load every source named by `spec`. Static tables keep only words in
    /// `vocabulary` when one is given.
    pub fn load(spec: &EmbeddingSpec, vocabulary: Option<&HashSet<String>>) -> Result<Self> {
        let mut sources = Vec::with_capacity(spec.sources.len());
        for s in &spec.sources {
            let context = |e: Error| match e {
                Error::Io(io) => Error::Io(std::io::Error::new(
                    io.kind(),
                    format!("{}: {io}", s.path.display()),
                )),
                Error::Format(m) => Error::Format(format!("{}: {m}", s.path.display())),
                other => other,
            };
            let loaded = match s.kind {
                SourceKind::Glove => {
                    let file = fs::File::open(&s.path).map_err(|e| context(e.into()))?;
                    Source::Glove(load_glove_reader(BufReader::new(file), vocabulary).map_err(context)?)
                }
                SourceKind::Precomputed => {
                    let bytes = fs::read(&s.path).map_err(|e| context(e.into()))?;
                    Source::Precomputed(load_precomputed(&bytes).map_err(context)?)
                }
            };
            sources.push(loaded);
        }
        Self::new(spec.expected_dim, sources)
    }

    pub fn dim(&self) -> usize {
        self.expected_dim
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    /// One concatenated vector per token, sources in declared order.
    pub fn vectorize(&self, seq: &LabeledSequence) -> Result<Vec<Vec<f64>>> {
        if seq.sentence_keys.len() != seq.tokens.len() {
            return Err(Error::Contract(format!(
                "sequence {} of {} lacks sentence keys",
                seq.sequence_index, seq.essay_id
            )));
        }
        seq.tokens
            .iter()
            .zip(&seq.sentence_keys)
            .map(|(tok, key)| {
                let mut v = Vec::with_capacity(self.expected_dim);
                for source in &self.sources {
                    match source {
                        Source::Glove(t) => match t.get(&tok.text) {
                            Some(x) => v.extend_from_slice(x),
                            None => v.resize(v.len() + t.dim(), 0.0),
                        },
                        Source::Precomputed(s) => {
                            let x = s.get(&seq.essay_id, key.sentence, key.token).ok_or_else(|| {
                                Error::Coverage {
                                    essay: seq.essay_id.clone(),
                                    sentence: key.sentence,
                                    token: key.token,
                                }
                            })?;
                            v.extend_from_slice(x);
                        }
                    }
                }
                debug_assert_eq!(v.len(), self.expected_dim);
                Ok(v)
            })
            .collect()
    }

    /// Right-padded batch of several sequences.
    pub fn vectorize_batch(&self, seqs: &[&LabeledSequence]) -> Result<BatchTensor> {
        let rows = seqs
            .iter()
            .map(|s| self.vectorize(s))
            .collect::<Result<Vec<_>>>()?;
        BatchTensor::from_sequences(&rows, self.expected_dim)
    }

    /// Static-table hit/miss counts over all tokens of `seqs`.
    pub fn oov_stats<'a>(&self, seqs: impl IntoIterator<Item = &'a LabeledSequence>) -> OovStats {
        let mut stats = OovStats::default();
        let tables: Vec<&EmbeddingTable> = self
            .sources
            .iter()
            .filter_map(|s| match s {
                Source::Glove(t) => Some(t),
                Source::Precomputed(_) => None,
            })
            .collect();
        for tok in seqs.into_iter().flat_map(|s| &s.tokens) {
            for t in &tables {
                stats.lookups += 1;
                if !t.contains(&tok.text) {
                    stats.misses += 1;
                }
            }
        }
        stats
    }
}

/// Lowercased token vocabulary of a set of sequences, for filtering large
/// static tables at load time.
pub fn vocabulary<'a>(seqs: impl IntoIterator<Item = &'a LabeledSequence>) -> HashSet<String> {
    seqs.into_iter()
        .flat_map(|s| &s.tokens)
        .map(|t| t.text.to_lowercase())
        .collect()
}
