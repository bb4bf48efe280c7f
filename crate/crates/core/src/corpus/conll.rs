//! Line-based sequence files: one token per line,
//! `token<TAB>essay_id<TAB>seq_idx<TAB>start<TAB>end<TAB>label`,
//! with a blank line after every sequence.

use std::io::Write;

use crate::error::{Error, Result};
use crate::labels::Label;

use super::{assign_sentence_keys, LabeledSequence, Token};

pub fn write_sequences<W: Write>(out: &mut W, sequences: &[LabeledSequence]) -> Result<()> {
    let mut buf = String::new();
    for seq in sequences {
        for (tok, label) in seq.tokens.iter().zip(&seq.labels) {
            buf.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                tok.text, seq.essay_id, seq.sequence_index, tok.start, tok.end, label
            ));
        }
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn sequences_to_string(sequences: &[LabeledSequence]) -> String {
    let mut buf = Vec::new();
    write_sequences(&mut buf, sequences).expect("writing to memory");
    String::from_utf8(buf).expect("sequence files are UTF-8")
}

/// Parse a sequence file. Sentence keys are recomputed from the tokens.
pub fn read_sequences(content: &str) -> Result<Vec<LabeledSequence>> {
    let mut sequences = Vec::new();
    let mut current: Option<LabeledSequence> = None;
    for (n, line) in content.lines().enumerate() {
        let n = n + 1;
        if line.trim().is_empty() {
            sequences.extend(current.take());
            continue;
        }
        let bad = |msg: &str| Error::Format(format!("sequence file line {n}: {msg}"));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(bad(&format!("expected 6 tab-separated fields, found {}", fields.len())));
        }
        let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(&format!("invalid {what} `{s}`")));
        let seq_idx = num(fields[2], "sequence index")?;
        let (start, end) = (num(fields[3], "start")?, num(fields[4], "end")?);
        if start >= end {
            return Err(bad("token offsets are empty or reversed"));
        }
        let label: Label = fields[5].parse().map_err(|_| bad(&format!("invalid label `{}`", fields[5])))?;
        let token = Token {
            text: fields[0].to_string(),
            start,
            end,
        };
        match current.as_mut() {
            Some(seq) if seq.essay_id == fields[1] && seq.sequence_index == seq_idx => {
                if seq.tokens.last().is_some_and(|t| t.end > start) {
                    return Err(bad("tokens are not in offset order"));
                }
                seq.tokens.push(token);
                seq.labels.push(label);
            }
            Some(_) => return Err(bad("sequence id changes without a blank line")),
            None => {
                current = Some(LabeledSequence {
                    essay_id: fields[1].to_string(),
                    sequence_index: seq_idx,
                    tokens: vec![token],
                    labels: vec![label],
                    sentence_keys: Vec::new(),
                })
            }
        }
    }
    sequences.extend(current);
    assign_sentence_keys(&mut sequences);
    Ok(sequences)
}
