use crate::error::{Error, Result};

use super::Essay;

/// A token with character offsets into its essay.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn joiner(c: char) -> bool {
    matches!(c, '\'' | '’' | '-')
}

/// Rule-based tokenizer. Maximal alphanumeric runs form tokens, with an
/// apostrophe or hyphen kept when it sits between two alphanumerics; any
/// other non-whitespace character is a token by itself.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_alphanumeric() {
            i += 1;
            while i < chars.len() {
                if chars[i].is_alphanumeric() {
                    i += 1;
                } else if joiner(chars[i]) && chars.get(i + 1).is_some_and(|c| c.is_alphanumeric()) {
                    i += 2;
                } else {
                    break;
                }
            }
        } else {
            i += 1;
        }
        tokens.push(Token {
            text: chars[start..i].iter().collect(),
            start,
            end: i,
        });
    }
    tokens
}

pub fn tokenize_essay(essay: &Essay) -> Vec<Token> {
    tokenize(essay.text())
}

/// Reassemble `text` from token strings and the gaps between them. Fails if
/// tokens overlap, disagree with the text they point at, or leave anything
/// but whitespace uncovered.
pub fn rebuild_text(text: &str, tokens: &[Token]) -> Result<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    for t in tokens {
        if t.start < pos || t.end <= t.start || t.end > chars.len() {
            return Err(Error::Corpus(format!(
                "token {:?} at {}..{} is out of order or out of range",
                t.text, t.start, t.end
            )));
        }
        let gap = &chars[pos..t.start];
        if let Some(c) = gap.iter().find(|c| !c.is_whitespace()) {
            return Err(Error::Corpus(format!(
                "character {c:?} before offset {} belongs to no token",
                t.start
            )));
        }
        if !chars[t.start..t.end].iter().copied().eq(t.text.chars()) {
            return Err(Error::Corpus(format!(
                "token {:?} does not match the text at {}..{}",
                t.text, t.start, t.end
            )));
        }
        out.extend(gap);
        out.push_str(&t.text);
        pos = t.end;
    }
    let tail = &chars[pos..];
    if tail.iter().any(|c| !c.is_whitespace()) {
        return Err(Error::Corpus(format!("text after offset {pos} belongs to no token")));
    }
    out.extend(tail);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(s: &str) -> Vec<String> {
        tokenize(s).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn sentence_with_final_period() {
        assert_eq!(texts("Cloning is wrong."), ["Cloning", "is", "wrong", "."]);
    }

    #[test]
    fn hyphenated_compound_is_one_token() {
        assert_eq!(texts("state-of-the-art"), ["state-of-the-art"]);
    }

    #[test]
    fn apostrophes_inside_words_are_kept() {
        assert_eq!(texts("don't 'quote' it’s"), ["don't", "'", "quote", "'", "it’s"]);
    }

    #[test]
    fn dangling_joiners_split_off() {
        assert_eq!(texts("pre- -post a--b"), ["pre", "-", "-", "post", "a", "-", "-", "b"]);
    }

    #[test]
    fn punctuation_and_symbols_are_single_characters() {
        assert_eq!(texts("(3.5%)!?"), ["(", "3", ".", "5", "%", ")", "!", "?"]);
    }

    #[test]
    fn offsets_are_character_positions() {
        let toks = tokenize("Café – ok");
        assert_eq!((toks[0].start, toks[0].end), (0, 4));
        assert_eq!((toks[1].text.as_str(), toks[1].start), ("–", 5));
        assert_eq!((toks[2].start, toks[2].end), (7, 9));
    }

    #[test]
    fn rebuild_rejects_foreign_tokens() {
        let text = "a b";
        let mut toks = tokenize(text);
        assert_eq!(rebuild_text(text, &toks).unwrap(), text);
        toks.pop();
        assert!(rebuild_text(text, &toks).is_err());
        let wrong = [Token { text: "x".into(), start: 0, end: 1 }];
        assert!(rebuild_text("a", &wrong).is_err());
    }

    proptest! {
        #[test]
        fn slices_and_gaps_rebuild_the_text(s in "[a-zA-Z0-9 '’\\-.,!?\\n\\t()é–]{0,80}") {
            prop_assert_eq!(rebuild_text(&s, &tokenize(&s)).unwrap(), s);
        }
    }
}
