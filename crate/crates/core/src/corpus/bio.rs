use crate::error::{Error, Result};
use crate::labels::Label;

use super::{AnnotationSpan, Token};

/// BIO labels: a token sharing at least one character with a span is inside
/// it; the first such token is `B`, later ones `I`, all others `O`.
pub fn bio_label(tokens: &[Token], spans: &[AnnotationSpan]) -> Result<Vec<Label>> {
    let mut labels = vec![Label::O; tokens.len()];
    let mut owner: Vec<Option<usize>> = vec![None; tokens.len()];
    for (si, span) in spans.iter().enumerate() {
        let first = tokens.partition_point(|t| t.end <= span.start);
        let mut opened = false;
        for (ti, tok) in tokens.iter().enumerate().skip(first) {
            if tok.start >= span.end {
                break;
            }
            if let Some(other) = owner[ti] {
                let o = &spans[other];
                return Err(Error::Corpus(format!(
                    "token {:?} at {}..{} overlaps spans {}..{} and {}..{}",
                    tok.text, tok.start, tok.end, o.start, o.end, span.start, span.end
                )));
            }
            owner[ti] = Some(si);
            labels[ti] = if opened { Label::I } else { Label::B };
            opened = true;
        }
    }
    Ok(labels)
}

/// Token ranges `start..end` of the units encoded by a label sequence. A `B`
/// opens a unit, `I` extends the open one (or opens one if none is open),
/// `O` closes it.
pub fn spans_from_labels(labels: &[Label]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &l) in labels.iter().enumerate() {
        match l {
            Label::B => {
                if let Some(s) = open.replace(i) {
                    out.push((s, i));
                }
            }
            Label::I => {
                open.get_or_insert(i);
            }
            Label::O => {
                if let Some(s) = open.take() {
                    out.push((s, i));
                }
            }
        }
    }
    if let Some(s) = open {
        out.push((s, labels.len()));
    }
    out
}

/// Token ranges covered by each span, in span order; spans touching no token
/// are omitted.
pub fn span_token_coverage(tokens: &[Token], spans: &[AnnotationSpan]) -> Vec<(usize, usize)> {
    spans
        .iter()
        .filter_map(|s| {
            let first = tokens.partition_point(|t| t.end <= s.start);
            let last = tokens.partition_point(|t| t.start < s.end);
            (first < last).then_some((first, last))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, UnitType};
    use proptest::prelude::*;
    use Label::{B, I, O};

    fn span(start: usize, end: usize) -> AnnotationSpan {
        AnnotationSpan {
            start,
            end,
            unit_type: UnitType::Premise,
        }
    }

    #[test]
    fn span_over_middle_tokens() {
        let toks = tokenize("a b cc dd ee f");
        assert_eq!(bio_label(&toks, &[span(4, 12)]).unwrap(), [O, O, B, I, I, O]);
    }

    #[test]
    fn no_spans_means_all_outside() {
        let toks = tokenize("one two three");
        assert_eq!(bio_label(&toks, &[]).unwrap(), [O, O, O]);
    }

    #[test]
    fn partial_character_overlap_counts_as_inside() {
        let toks = tokenize("alpha beta gamma");
        assert_eq!(bio_label(&toks, &[span(3, 7)]).unwrap(), [B, I, O]);
    }

    #[test]
    fn adjacent_spans_each_get_a_begin() {
        let toks = tokenize("aa bb cc dd");
        assert_eq!(bio_label(&toks, &[span(0, 5), span(6, 11)]).unwrap(), [B, I, B, I]);
    }

    #[test]
    fn token_in_two_spans_is_rejected() {
        let toks = tokenize("abcdef");
        assert!(matches!(
            bio_label(&toks, &[span(0, 2), span(3, 5)]),
            Err(Error::Corpus(_))
        ));
    }

    #[test]
    fn decoding_handles_orphan_inside() {
        assert_eq!(spans_from_labels(&[I, I, O, B, B, I]), [(0, 2), (3, 4), (4, 6)]);
    }

    proptest! {
        #[test]
        fn labels_round_trip_to_span_coverage(
            words in proptest::collection::vec("[a-z]{1,4}", 1..20),
            cuts in proptest::collection::vec((0usize..20, 1usize..5), 0..6),
        ) {
            let text = words.join(" ");
            let toks = tokenize(&text);
            // Non-overlapping spans over whole tokens, separated by at least one token.
            let mut spans = Vec::new();
            let mut next_free = 0;
            let mut sorted = cuts.clone();
            sorted.sort();
            for (a, len) in sorted {
                if a < next_free || a >= toks.len() { continue; }
                let b = (a + len).min(toks.len());
                spans.push(span(toks[a].start, toks[b - 1].end));
                next_free = b;
            }
            let labels = bio_label(&toks, &spans).unwrap();
            prop_assert_eq!(spans_from_labels(&labels), span_token_coverage(&toks, &spans));
            prop_assert_eq!(labels.iter().filter(|&&l| l == B).count(), spans.len());
        }
    }
}
