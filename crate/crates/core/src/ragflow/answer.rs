use std::collections::BTreeSet;

use super::Letter;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnswerParseError {
    #[error("no valid option letter in response")]
    NoLetter,
    #[error("response names several options: {0:?}")]
    Ambiguous(Vec<Letter>),
}

/// Extracts the chosen option letter from a model response.
///
/// A response that is exactly one valid letter (after trimming) wins outright.
/// Otherwise every valid capital letter standing alone (no letter or digit on
/// either side) is a candidate; exactly one distinct candidate is accepted.
pub fn parse_answer(raw: &str, valid: &[Letter]) -> Result<Letter, AnswerParseError> {
    let trimmed = raw.trim();
    if let Ok(l) = trimmed.parse::<Letter>() {
        if valid.contains(&l) {
            return Ok(l);
        }
    }
    let chars: Vec<char> = raw.chars().collect();
    let mut found = BTreeSet::new();
    for (i, &c) in chars.iter().enumerate() {
        let Some(l) = Letter::from_char(c).filter(|l| valid.contains(l)) else {
            continue;
        };
        let before = i.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i + 1).copied();
        if !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric) {
            found.insert(l);
        }
    }
    match found.len() {
        0 => Err(AnswerParseError::NoLetter),
        1 => Ok(*found.first().expect("one element")),
        _ => Err(AnswerParseError::Ambiguous(found.into_iter().collect())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abcd() -> Vec<Letter> {
        "ABCD".chars().map(|c| Letter::from_char(c).unwrap()).collect()
    }

    fn l(c: char) -> Letter {
        Letter::from_char(c).unwrap()
    }

    #[test]
    fn strict_and_lenient() {
        assert_eq!(parse_answer("B", &abcd()), Ok(l('B')));
        assert_eq!(parse_answer("  D\n", &abcd()), Ok(l('D')));
        assert_eq!(parse_answer("Answer: C", &abcd()), Ok(l('C')));
        assert_eq!(parse_answer("(A)", &abcd()), Ok(l('A')));
        assert_eq!(parse_answer("الإجابة: B", &abcd()), Ok(l('B')));
        assert_eq!(parse_answer("C. C is right", &abcd()), Ok(l('C')));
    }

    #[test]
    fn failures() {
        assert_eq!(
            parse_answer("both A and B seem right", &abcd()),
            Err(AnswerParseError::Ambiguous(vec![l('A'), l('B')]))
        );
        assert_eq!(parse_answer("E", &abcd()), Err(AnswerParseError::NoLetter));
        assert_eq!(parse_answer("Because", &abcd()), Err(AnswerParseError::NoLetter));
        assert_eq!(parse_answer("", &abcd()), Err(AnswerParseError::NoLetter));
        assert_eq!(parse_answer("b", &abcd()), Err(AnswerParseError::NoLetter));
    }

    #[test]
    fn every_pure_letter_roundtrips() {
        let all: Vec<Letter> = Letter::ALL.to_vec();
        for &x in &all {
            assert_eq!(parse_answer(&x.to_string(), &all), Ok(x));
        }
    }
}
