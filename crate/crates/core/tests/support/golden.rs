//! The four reference sentences for the repetition rules.

#![allow(dead_code)]

use mmicap::corpus::{synthetic_lexicon, AttributeInventory, FeedbackType};
use mmicap::filter::{validate_sentence, Rule};

pub const GOLDEN: [(&str, FeedbackType, Rule); 4] = [
    ("add a black striped black jacket", FeedbackType::Tip, Rule::WordRepeatInNp),
    ("your leggings complement your black leggings", FeedbackType::Good, Rule::NounRepeatGlobal),
    ("swap your black leggings for white leggings", FeedbackType::Tip, Rule::None),
    ("swap your black leggings for black leggings", FeedbackType::Tip, Rule::FullNpRepeat),
];

/// `(sentence, expected, got)` for each golden case.
pub fn golden_verdicts() -> Vec<(&'static str, Rule, Rule)> {
    let lex = synthetic_lexicon(&AttributeInventory::default());
    GOLDEN
        .iter()
        .map(|&(s, t, want)| {
            let words: Vec<&str> = s.split_whitespace().collect();
            let v = validate_sentence(&words, t, &lex);
            assert_eq!(v.valid, v.rule == Rule::None);
            (s, want, v.rule)
        })
        .collect()
}
