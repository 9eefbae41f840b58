//! The 35-symbol character inventory used by the character view.

use std::fmt;

use crate::error::{Error, Result};

/// Number of character symbols.
pub const ALPHABET_SIZE: usize = 35;

const PUNCTUATION: [char; 6] = ['[', ']', '<', '>', '-', '\''];

/// Multi-character noise markers, each one symbol.
pub const NOISE_MARKERS: [&str; 3] = ["[NOISE]", "[VOCALIZED-NOISE]", "[LAUGHTER]"];

/// Fixed ordering: `A`–`Z` are 0..26, punctuation `[ ] < > - '` is 26..32,
/// noise markers are 32..35.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CharAlphabet;

impl CharAlphabet {
    pub fn symbols() -> Vec<String> {
        let mut out: Vec<String> = ('A'..='Z').map(String::from).collect();
        out.extend(PUNCTUATION.iter().map(|c| c.to_string()));
        out.extend(NOISE_MARKERS.iter().map(|s| s.to_string()));
        out
    }

    /// Id of a single-character symbol. Lowercase letters fold to uppercase.
    pub fn id_of_char(c: char) -> Option<u8> {
        let c = c.to_ascii_uppercase();
        if c.is_ascii_uppercase() {
            return Some(c as u8 - b'A');
        }
        PUNCTUATION.iter().position(|&p| p == c).map(|i| 26 + i as u8)
    }

    pub fn id_of_marker(marker: &str) -> Option<u8> {
        NOISE_MARKERS
            .iter()
            .position(|m| m.eq_ignore_ascii_case(marker))
            .map(|i| 32 + i as u8)
    }

    pub fn symbol(id: u8) -> Option<String> {
        Self::symbols().into_iter().nth(id as usize)
    }
}

/// Nonempty sequence of alphabet ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CharSequence(Vec<u8>);

impl CharSequence {
    pub fn new(ids: Vec<u8>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::data("empty character sequence"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= ALPHABET_SIZE) {
            return Err(Error::data(format!("character id {bad} outside alphabet")));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for CharSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let symbols = CharAlphabet::symbols();
        for &id in &self.0 {
            f.write_str(&symbols[id as usize])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn alphabet_is_a_bijection_onto_0_to_34() {
        let symbols = CharAlphabet::symbols();
        assert_eq!(symbols.len(), ALPHABET_SIZE);
        let unique: HashSet<_> = symbols.iter().collect();
        assert_eq!(unique.len(), ALPHABET_SIZE);
        for (i, s) in symbols.iter().enumerate() {
            let id = if s.len() == 1 {
                CharAlphabet::id_of_char(s.chars().next().unwrap())
            } else {
                CharAlphabet::id_of_marker(s)
            };
            assert_eq!(id, Some(i as u8));
        }
    }

    #[test]
    fn char_sequence_validates() {
        assert!(CharSequence::new(vec![]).is_err());
        assert!(CharSequence::new(vec![35]).is_err());
        assert_eq!(CharSequence::new(vec![2, 0, 19]).unwrap().to_string(), "CAT");
    }
}
