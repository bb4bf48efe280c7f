use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::labels::Label;

use super::{bio_label, tokenize_essay, AnnotationSpan, Essay, Token};

/// How an essay is cut into model-input sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    /// One sequence per line of text.
    #[default]
    Paragraph,
    /// One sequence per sentence; lines also end sentences.
    Sentence,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Paragraph => "paragraph",
            Granularity::Sentence => "sentence",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paragraph" => Ok(Granularity::Paragraph),
            "sentence" => Ok(Granularity::Sentence),
            _ => Err(Error::Config(format!(
                "unknown granularity `{s}` (expected paragraph or sentence)"
            ))),
        }
    }
}

/// Essay-global sentence number and position within that sentence. This is
/// the key under which precomputed contextual vectors are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SentenceKey {
    pub sentence: u32,
    pub token: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSequence {
    pub essay_id: String,
    pub sequence_index: usize,
    pub tokens: Vec<Token>,
    pub labels: Vec<Label>,
    pub sentence_keys: Vec<SentenceKey>,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceBuild {
    pub sequences: Vec<LabeledSequence>,
    /// Sequences whose first label was `I` and was rewritten to `B`.
    pub relabeled: usize,
}

fn is_terminal(tok: &Token) -> bool {
    matches!(tok.text.as_str(), "." | "!" | "?")
}

fn starts_upper(tok: &Token) -> bool {
    tok.text.chars().next().is_some_and(char::is_uppercase)
}

/// Sentence boundary between `prev` and `next` that lie on the same line.
fn in_line_sentence_break(prev: &Token, next: &Token, next_label: Label) -> bool {
    is_terminal(prev) && next.start > prev.end && starts_upper(next) && next_label != Label::I
}

/// Cut an essay into labeled sequences.
///
/// Line breaks always end a sequence. Under sentence granularity a sequence
/// also ends after `.`, `!` or `?` when whitespace and an uppercase-initial
/// token follow, unless that token continues an argumentative unit. A
/// sequence that starts inside a unit has its first label rewritten to `B`.
pub fn build_sequences(
    essay: &Essay,
    spans: &[AnnotationSpan],
    granularity: Granularity,
) -> Result<SequenceBuild> {
    let tokens = tokenize_essay(essay);
    let labels = bio_label(&tokens, spans)?;
    let n = tokens.len();

    let mut sequence_break = vec![false; n];
    let mut keys = Vec::with_capacity(n);
    let (mut sentence, mut position) = (0u32, 0u32);
    for i in 0..n {
        if i > 0 {
            let gap = essay.slice(tokens[i - 1].end, tokens[i].start).unwrap_or("");
            let line_break = gap.contains('\n');
            let sentence_break =
                line_break || in_line_sentence_break(&tokens[i - 1], &tokens[i], labels[i]);
            if sentence_break {
                sentence += 1;
                position = 0;
            }
            sequence_break[i] = match granularity {
                Granularity::Paragraph => line_break,
                Granularity::Sentence => sentence_break,
            };
        }
        keys.push(SentenceKey {
            sentence,
            token: position,
        });
        position += 1;
    }

    let mut sequences = Vec::new();
    let mut relabeled = 0;
    let mut start = 0;
    for end in 1..=n {
        if end < n && !sequence_break[end] {
            continue;
        }
        let mut seq_labels = labels[start..end].to_vec();
        if seq_labels[0] == Label::I {
            seq_labels[0] = Label::B;
            relabeled += 1;
        }
        sequences.push(LabeledSequence {
            essay_id: essay.id().to_string(),
            sequence_index: sequences.len(),
            tokens: tokens[start..end].to_vec(),
            labels: seq_labels,
            sentence_keys: keys[start..end].to_vec(),
        });
        start = end;
    }
    Ok(SequenceBuild {
        sequences,
        relabeled,
    })
}

/// Recompute sentence keys from sequences alone, e.g. after reading them
/// back from a sequence file. `sequences` must hold whole essays in order;
/// consecutive entries with the same essay id belong to one essay.
pub fn assign_sentence_keys(sequences: &mut [LabeledSequence]) {
    let mut current: Option<String> = None;
    let mut sentence = 0u32;
    for seq in sequences.iter_mut() {
        if current.as_deref() == Some(seq.essay_id.as_str()) {
            sentence += 1;
        } else {
            current = Some(seq.essay_id.clone());
            sentence = 0;
        }
        let mut position = 0u32;
        seq.sentence_keys.clear();
        for i in 0..seq.tokens.len() {
            if i > 0 && in_line_sentence_break(&seq.tokens[i - 1], &seq.tokens[i], seq.labels[i]) {
                sentence += 1;
                position = 0;
            }
            seq.sentence_keys.push(SentenceKey {
                sentence,
                token: position,
            });
            position += 1;
        }
    }
}
