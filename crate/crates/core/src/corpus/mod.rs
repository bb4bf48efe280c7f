//! Persuasive-essay ingestion: brat standoff files, tokenization, BIO
//! labels, model-input sequences, the train/test split and sequence files.

mod bio;
mod brat;
mod conll;
mod sequences;
mod split;
mod tokenize;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::labels::Label;

pub use bio::{bio_label, span_token_coverage, spans_from_labels};
pub use brat::{parse_brat, parse_brat_essay, AnnotationSpan, Essay, UnitType};
pub use conll::{read_sequences, sequences_to_string, write_sequences};
pub use sequences::{
    assign_sentence_keys, build_sequences, Granularity, LabeledSequence, SentenceKey,
    SequenceBuild,
};
pub use split::{load_split, SplitSet, SplitSpec};
pub use tokenize::{rebuild_text, tokenize, tokenize_essay, Token};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedEssay {
    pub essay: Essay,
    pub spans: Vec<AnnotationSpan>,
}

/// Essays of a corpus directory, ordered by id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub essays: Vec<AnnotatedEssay>,
}

impl Corpus {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.essays.iter().map(|e| e.essay.id())
    }

    pub fn len(&self) -> usize {
        self.essays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.essays.is_empty()
    }
}

/// Load every `<id>.txt` / `<id>.ann` pair in `dir`. A text file without its
/// annotation file (or vice versa) is an error, as is an empty directory.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let mut stems: Vec<(String, PathBuf)> = Vec::new();
    let mut anns = std::collections::BTreeSet::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let (Some(stem), Some(ext)) = (
            path.file_stem().and_then(|s| s.to_str()),
            path.extension().and_then(|s| s.to_str()),
        ) else {
            continue;
        };
        match ext {
            "txt" => stems.push((stem.to_string(), path.clone())),
            "ann" => {
                anns.insert(stem.to_string());
            }
            _ => {}
        }
    }
    stems.sort();
    for ann in &anns {
        if !stems.iter().any(|(s, _)| s == ann) {
            return Err(Error::Corpus(format!("{ann}.ann has no matching .txt file")));
        }
    }
    if let Some((stem, _)) = stems.iter().find(|(s, _)| !anns.contains(s)) {
        return Err(Error::Corpus(format!("{stem}.txt has no matching .ann file")));
    }
    if stems.is_empty() {
        return Err(Error::Corpus(format!(
            "no .txt/.ann essay pairs found in {}",
            dir.display()
        )));
    }
    let mut essays = Vec::with_capacity(stems.len());
    for (stem, txt) in stems {
        let text = fs::read_to_string(&txt)?;
        let ann_path = txt.with_extension("ann");
        let ann = fs::read_to_string(&ann_path)?;
        let essay = Essay::new(stem, text)
            .map_err(|e| Error::Corpus(format!("{}: {e}", txt.display())))?;
        let spans = parse_brat_essay(&ann, &essay)
            .map_err(|e| Error::Corpus(format!("{}: {e}", ann_path.display())))?;
        essays.push(AnnotatedEssay { essay, spans });
    }
    Ok(Corpus { essays })
}

/// Counts recorded by a conversion run.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ConversionReport {
    pub essays: usize,
    pub train_essays: usize,
    pub test_essays: usize,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub train_tokens: usize,
    pub test_tokens: usize,
    pub spans: usize,
    /// Token counts for B, I, O over both sets.
    pub label_histogram: [usize; 3],
    /// Sequences whose leading `I` was rewritten to `B`.
    pub boundary_relabels: usize,
    pub granularity: String,
}

impl ConversionReport {
    /// Train tokens per test token.
    pub fn train_test_token_ratio(&self) -> f64 {
        self.train_tokens as f64 / self.test_tokens.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversion {
    pub train: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
    pub report: ConversionReport,
}

/// Label, segment and split a whole corpus.
pub fn convert_corpus(corpus: &Corpus, split: &SplitSpec, granularity: Granularity) -> Result<Conversion> {
    split.validate(corpus.ids())?;
    let mut out = Conversion {
        train: Vec::new(),
        test: Vec::new(),
        report: ConversionReport {
            essays: corpus.len(),
            granularity: granularity.to_string(),
            ..Default::default()
        },
    };
    for ae in &corpus.essays {
        let built = build_sequences(&ae.essay, &ae.spans, granularity)
            .map_err(|e| Error::Corpus(format!("{}: {e}", ae.essay.id())))?;
        let r = &mut out.report;
        r.spans += ae.spans.len();
        r.boundary_relabels += built.relabeled;
        let tokens: usize = built.sequences.iter().map(LabeledSequence::len).sum();
        for seq in &built.sequences {
            for &l in &seq.labels {
                r.label_histogram[l.index()] += 1;
            }
        }
        let set = split.get(ae.essay.id()).expect("validated split");
        match set {
            SplitSet::Train => {
                r.train_essays += 1;
                r.train_sequences += built.sequences.len();
                r.train_tokens += tokens;
                out.train.extend(built.sequences);
            }
            SplitSet::Test => {
                r.test_essays += 1;
                r.test_sequences += built.sequences.len();
                r.test_tokens += tokens;
                out.test.extend(built.sequences);
            }
        }
    }
    Ok(out)
}

/// Totals from a successful [`audit_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CorpusAudit {
    pub essays: usize,
    pub tokens: usize,
    pub spans: usize,
}

/// Check that every essay's tokens rebuild its text exactly and that decoding
/// its BIO labels recovers the token coverage of every annotated span.
pub fn audit_corpus(corpus: &Corpus) -> Result<CorpusAudit> {
    let mut audit = CorpusAudit::default();
    for ae in &corpus.essays {
        let id = ae.essay.id();
        let tokens = tokenize_essay(&ae.essay);
        let rebuilt = rebuild_text(ae.essay.text(), &tokens)
            .map_err(|e| Error::Corpus(format!("{id}: {e}")))?;
        if rebuilt != ae.essay.text() {
            return Err(Error::Corpus(format!("{id}: tokens do not rebuild the text")));
        }
        let labels = bio_label(&tokens, &ae.spans).map_err(|e| Error::Corpus(format!("{id}: {e}")))?;
        let decoded = spans_from_labels(&labels);
        let expected = span_token_coverage(&tokens, &ae.spans);
        if decoded != expected {
            return Err(Error::Corpus(format!(
                "{id}: BIO decoding gives {} units, the annotation covers {}",
                decoded.len(),
                expected.len()
            )));
        }
        audit.essays += 1;
        audit.tokens += tokens.len();
        audit.spans += ae.spans.len();
    }
    Ok(audit)
}

/// Token counts per label over a set of sequences, in `B, I, O` order.
pub fn label_histogram(sequences: &[LabeledSequence]) -> [usize; Label::COUNT] {
    let mut h = [0; Label::COUNT];
    for l in sequences.iter().flat_map(|s| &s.labels) {
        h[l.index()] += 1;
    }
    h
}
