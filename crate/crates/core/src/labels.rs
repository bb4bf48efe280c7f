use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// BIO tag of a token. The declaration order `B < I < O` is also the argmax
/// tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    B,
    I,
    O,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::B, Label::I, Label::O];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::B => "B",
            Label::I => "I",
            Label::O => "O",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "B" => Ok(Label::B),
            "I" => Ok(Label::I),
            "O" => Ok(Label::O),
            other => Err(Error::Format(format!("unknown label `{other}`"))),
        }
    }
}

/// Index of the largest score; the first maximum wins.
pub fn argmax_label(scores: &[f64]) -> Label {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().take(Label::COUNT) {
        if s > scores[best] {
            best = i;
        }
    }
    Label::ALL[best]
}
