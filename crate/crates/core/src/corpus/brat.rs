use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// An essay's raw text. All offsets into it are character (code point)
/// offsets, as in brat standoff files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Essay {
    id: String,
    text: String,
    boundaries: Vec<usize>,
}

impl Essay {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Corpus(format!("essay {id} has no text")));
        }
        let boundaries = text
            .char_indices()
            .map(|(b, _)| b)
            .chain(std::iter::once(text.len()))
            .collect();
        Ok(Self {
            id,
            text,
            boundaries,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Length in characters.
    pub fn char_len(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Characters `start..end`, or `None` when out of range.
    pub fn slice(&self, start: usize, end: usize) -> Option<&str> {
        if start > end || end > self.char_len() {
            return None;
        }
        Some(&self.text[self.boundaries[start]..self.boundaries[end]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnitType {
    MajorClaim,
    Claim,
    Premise,
}

impl UnitType {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitType::MajorClaim => "MajorClaim",
            UnitType::Claim => "Claim",
            UnitType::Premise => "Premise",
        }
    }
}

impl fmt::Display for UnitType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UnitType {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "MajorClaim" => Ok(UnitType::MajorClaim),
            "Claim" => Ok(UnitType::Claim),
            "Premise" => Ok(UnitType::Premise),
            _ => Err(()),
        }
    }
}

/// An argumentative unit, `start..end` in characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AnnotationSpan {
    pub start: usize,
    pub end: usize,
    pub unit_type: UnitType,
}

/// Argumentative-unit text-bound annotations of one `.ann` file, sorted by
/// start offset. Relations, attributes, notes and other entity types are
/// skipped.
pub fn parse_brat(ann_content: &str, text: &str) -> Result<Vec<AnnotationSpan>> {
    let essay = Essay::new("", text)?;
    parse_brat_essay(ann_content, &essay)
}

pub fn parse_brat_essay(ann_content: &str, essay: &Essay) -> Result<Vec<AnnotationSpan>> {
    let mut spans = Vec::new();
    for (n, line) in ann_content.lines().enumerate() {
        let n = n + 1;
        if !line.starts_with('T') {
            continue;
        }
        let bad = |msg: &str| Error::Corpus(format!("line {n}: {msg}: `{line}`"));
        let mut fields = line.splitn(3, '\t');
        let (_id, body, surface) = match (fields.next(), fields.next(), fields.next()) {
            (Some(id), Some(body), Some(surface)) => (id, body, surface),
            _ => return Err(bad("expected three tab-separated fields")),
        };
        let mut parts = body.split(' ');
        let Ok(unit_type) = parts.next().unwrap_or("").parse::<UnitType>() else {
            continue;
        };
        let rest: Vec<&str> = parts.collect();
        if rest.len() != 2 {
            return Err(bad("expected one contiguous `start end` offset pair"));
        }
        let (start, end) = match (rest[0].parse::<usize>(), rest[1].parse::<usize>()) {
            (Ok(s), Ok(e)) => (s, e),
            _ => return Err(bad("offsets are not integers")),
        };
        if start >= end || end > essay.char_len() {
            return Err(bad(&format!(
                "offsets {start}..{end} out of range for text of {} characters",
                essay.char_len()
            )));
        }
        if essay.slice(start, end) != Some(surface) {
            return Err(bad(&format!(
                "surface does not match text {:?}",
                essay.slice(start, end).unwrap_or_default()
            )));
        }
        spans.push((n, AnnotationSpan {
            start,
            end,
            unit_type,
        }));
    }
    spans.sort_by_key(|(_, s)| (s.start, s.end));
    for pair in spans.windows(2) {
        let ((n1, a), (n2, b)) = (&pair[0], &pair[1]);
        if b.start < a.end {
            return Err(Error::Corpus(format!(
                "lines {n1} and {n2}: spans {}..{} and {}..{} overlap",
                a.start, a.end, b.start, b.end
            )));
        }
    }
    Ok(spans.into_iter().map(|(_, s)| s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "Intro text. Cloning is wrong because it harms.";

    #[test]
    fn single_claim_line() {
        let ann = "T1\tClaim 12 28\tCloning is wrong\n";
        let spans = parse_brat(ann, TEXT).unwrap();
        assert_eq!(
            spans,
            [AnnotationSpan {
                start: 12,
                end: 28,
                unit_type: UnitType::Claim
            }]
        );
    }

    #[test]
    fn relations_attributes_and_other_types_are_ignored() {
        let ann = "R1\tsupports Arg1:T2 Arg2:T1\nA1\tStance T1 For\n#1\tAnnotatorNotes T1\tx\nT9\tOther 0 5\tIntro\n";
        assert!(parse_brat(ann, TEXT).unwrap().is_empty());
    }

    #[test]
    fn spans_are_sorted_by_offset() {
        let ann = "T2\tPremise 37 45\tit harms\nT1\tMajorClaim 12 28\tCloning is wrong\n";
        let spans = parse_brat(ann, TEXT).unwrap();
        assert_eq!(spans[0].unit_type, UnitType::MajorClaim);
        assert_eq!(spans[1].start, 37);
    }

    #[test]
    fn out_of_range_offsets_name_the_line() {
        let ann = "T1\tClaim 0 5\tIntro\nT2\tClaim 40 90\tzzz\n";
        let err = parse_brat(ann, TEXT).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn surface_mismatch_is_an_integrity_error() {
        let ann = "T1\tClaim 12 28\tCloning is right\n";
        assert!(matches!(parse_brat(ann, TEXT), Err(Error::Corpus(m)) if m.contains("line 1")));
    }

    #[test]
    fn overlapping_spans_are_rejected() {
        let ann = "T1\tClaim 12 28\tCloning is wrong\nT2\tPremise 20 28\tis wrong\n";
        assert!(matches!(parse_brat(ann, TEXT), Err(Error::Corpus(_))));
    }

    #[test]
    fn offsets_count_characters_not_bytes() {
        let text = "Café – good. It is “fine”.";
        let ann = "T1\tClaim 13 26\tIt is “fine”.\n";
        let spans = parse_brat(ann, text).unwrap();
        assert_eq!((spans[0].start, spans[0].end), (13, 26));
    }
}
