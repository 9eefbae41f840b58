//! Word → character-sequence spelling rules.
//!
//! Letters map to themselves (case-folded), the six punctuation marks are kept
//! as symbols so partial-word markers like `YO[UR]>` survive, and a whole-word
//! noise marker becomes its single symbol. Digit runs are verbalised: values up
//! to twenty become one number word, longer runs are read digit by digit with
//! the digit words concatenated (`123` → `ONETWOTHREE`).

use super::alphabet::{CharAlphabet, CharSequence};
use crate::error::{Error, Result};

const NUMBER_WORDS: [&str; 21] = [
    "ZERO",
    "ONE",
    "TWO",
    "THREE",
    "FOUR",
    "FIVE",
    "SIX",
    "SEVEN",
    "EIGHT",
    "NINE",
    "TEN",
    "ELEVEN",
    "TWELVE",
    "THIRTEEN",
    "FOURTEEN",
    "FIFTEEN",
    "SIXTEEN",
    "SEVENTEEN",
    "EIGHTEEN",
    "NINETEEN",
    "TWENTY",
];

fn verbalize_digits(run: &str) -> String {
    match run.parse::<usize>() {
        // leading zeros ("07") are read digit by digit
        Ok(n) if n < NUMBER_WORDS.len() && (run.len() == 1 || !run.starts_with('0')) => NUMBER_WORDS[n].to_string(),
        _ => run.bytes().map(|b| NUMBER_WORDS[(b - b'0') as usize]).collect(),
    }
}

/// Spells `word` over the 35-symbol alphabet.
pub fn spell(word: &str) -> Result<CharSequence> {
    if let Some(id) = CharAlphabet::id_of_marker(word) {
        return CharSequence::new(vec![id]);
    }
    let mut ids = Vec::with_capacity(word.len());
    let mut chars = word.char_indices().peekable();
    while let Some((start, c)) = chars.next() {
        if c.is_ascii_digit() {
            let mut end = start + 1;
            while let Some(&(i, d)) = chars.peek() {
                if !d.is_ascii_digit() {
                    break;
                }
                end = i + 1;
                chars.next();
            }
            for ch in verbalize_digits(&word[start..end]).chars() {
                ids.push(CharAlphabet::id_of_char(ch).expect("number words are letters"));
            }
            continue;
        }
        match CharAlphabet::id_of_char(c) {
            Some(id) => ids.push(id),
            None => {
                return Err(Error::Spelling {
                    word: word.to_string(),
                    ch: c,
                })
            }
        }
    }
    CharSequence::new(ids).map_err(|_| Error::data(format!("word {word:?} spells to nothing")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_eleven_is_spelled_out() {
        assert_eq!(spell("7-11").unwrap().to_string(), "SEVEN-ELEVEN");
    }

    #[test]
    fn partial_word_markers_are_symbols() {
        let s = spell("YO[UR]>").unwrap();
        let expected: Vec<u8> = "YO[UR]>"
            .chars()
            .map(|c| CharAlphabet::id_of_char(c).unwrap())
            .collect();
        assert_eq!(s.ids(), expected.as_slice());
        assert_eq!(spell("<[YO]UR").unwrap().to_string(), "<[YO]UR");
    }

    #[test]
    fn plain_word_is_identity() {
        assert_eq!(spell("CAT").unwrap().ids(), &[2, 0, 19]);
        assert_eq!(spell("cat").unwrap().ids(), &[2, 0, 19]);
    }

    #[test]
    fn noise_marker_is_one_symbol() {
        assert_eq!(spell("[LAUGHTER]").unwrap().ids(), &[34]);
    }

    #[test]
    fn larger_numbers_go_digit_by_digit() {
        assert_eq!(spell("20").unwrap().to_string(), "TWENTY");
        assert_eq!(spell("123").unwrap().to_string(), "ONETWOTHREE");
        assert_eq!(spell("07").unwrap().to_string(), "ZEROSEVEN");
    }

    #[test]
    fn unrepresentable_characters_are_rejected() {
        assert!(matches!(spell("CAFÉ"), Err(Error::Spelling { ch: 'É', .. })));
        assert!(spell("A B").is_err());
        assert!(spell("").is_err());
    }
}
