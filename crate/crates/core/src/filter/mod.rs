//! Noun-phrase chunking and the repetition rules that reject degenerate
//! feedback such as "add a black striped black jacket".

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::corpus::{FeedbackType, Lexicon, Pos, Vocabulary};

/// Anything that can tag a token. Unknown tokens are tagged `Other`.
pub trait Tagger {
    fn tag(&self, token: &str) -> Pos;
}

impl Tagger for Lexicon {
    fn tag(&self, token: &str) -> Pos {
        self.get(token).copied().unwrap_or(Pos::Other)
    }
}

impl Tagger for Vocabulary {
    fn tag(&self, token: &str) -> Pos {
        self.pos_of(token)
    }
}

/// Half-open token span `start..end`; the head is the last noun.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct NounPhrase {
    pub start: usize,
    pub end: usize,
    pub head: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// A word occurs twice inside one noun phrase.
    WordRepeatInNp,
    /// A noun occurs in two noun phrases (GOOD feedback only).
    NounRepeatGlobal,
    /// Two noun phrases are identical (TIP feedback only).
    FullNpRepeat,
    None,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::WordRepeatInNp => "word-repeat-in-np",
            Rule::NounRepeatGlobal => "noun-repeat-global",
            Rule::FullNpRepeat => "full-np-repeat",
            Rule::None => "none",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FilterVerdict {
    pub valid: bool,
    pub rule: Rule,
    /// Spans that witness the violation (empty when valid).
    pub evidence: Vec<(usize, usize)>,
}

impl FilterVerdict {
    fn ok() -> Self {
        Self {
            valid: true,
            rule: Rule::None,
            evidence: Vec::new(),
        }
    }

    fn violated(rule: Rule, evidence: Vec<(usize, usize)>) -> Self {
        Self {
            valid: false,
            rule,
            evidence,
        }
    }
}

// Possessive pronouns ("your") open a phrase like determiners do.
fn is_determiner(p: Pos) -> bool {
    matches!(p, Pos::Det | Pos::Pron)
}

fn is_modifier(p: Pos) -> bool {
    matches!(p, Pos::Adj | Pos::Noun | Pos::Num)
}

/// Maximal matches of `(DET|PRON)? (ADJ|NOUN|NUM)* NOUN+`, left to right.
pub fn chunk_noun_phrases<S: AsRef<str>>(sentence: &[S], tagger: &impl Tagger) -> Vec<NounPhrase> {
    let tags: Vec<Pos> = sentence.iter().map(|t| tagger.tag(t.as_ref())).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        let body = if is_determiner(tags[i]) { i + 1 } else { i };
        let mut k = body;
        while k < tags.len() && is_modifier(tags[k]) {
            k += 1;
        }
        // The body run may end in adjectives or numbers; the phrase stops at
        // its last noun.
        match (body..k).rev().find(|&j| tags[j] == Pos::Noun) {
            Some(last) => {
                out.push(NounPhrase {
                    start: i,
                    end: last + 1,
                    head: last,
                });
                i = last + 1;
            }
            None => i += 1,
        }
    }
    out
}

/// Applies the repetition rules in order A (both types), B (GOOD), C (TIP)
/// and reports the first one violated.
///
/// Phrases are compared for rule C without their leading determiner, so
/// "your black leggings" repeats "black leggings".
pub fn validate_sentence<S: AsRef<str>>(
    sentence: &[S],
    feedback_type: FeedbackType,
    tagger: &impl Tagger,
) -> FilterVerdict {
    let toks: Vec<&str> = sentence.iter().map(|t| t.as_ref()).collect();
    let nps = chunk_noun_phrases(&toks, tagger);

    for np in &nps {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for j in np.start..np.end {
            if let Some(&first) = seen.get(toks[j]) {
                return FilterVerdict::violated(Rule::WordRepeatInNp, vec![(np.start, np.end), (first, j + 1)]);
            }
            seen.insert(toks[j], j);
        }
    }

    match feedback_type {
        FeedbackType::Good => {
            let mut owner: HashMap<&str, usize> = HashMap::new();
            for (k, np) in nps.iter().enumerate() {
                for j in np.start..np.end {
                    if tagger.tag(toks[j]) != Pos::Noun {
                        continue;
                    }
                    match owner.get(toks[j]) {
                        Some(&other) if other != k => {
                            let a = &nps[other];
                            return FilterVerdict::violated(
                                Rule::NounRepeatGlobal,
                                vec![(a.start, a.end), (np.start, np.end)],
                            );
                        }
                        _ => {
                            owner.insert(toks[j], k);
                        }
                    }
                }
            }
        }
        FeedbackType::Tip => {
            let core = |np: &NounPhrase| {
                let s = if is_determiner(tagger.tag(toks[np.start])) { np.start + 1 } else { np.start };
                &toks[s..np.end]
            };
            for (a, x) in nps.iter().enumerate() {
                for y in &nps[a + 1..] {
                    if core(x) == core(y) {
                        return FilterVerdict::violated(Rule::FullNpRepeat, vec![(x.start, x.end), (y.start, y.end)]);
                    }
                }
            }
        }
    }
    FilterVerdict::ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthetic_lexicon, AttributeInventory};
    use proptest::prelude::*;

    fn lex() -> Lexicon {
        synthetic_lexicon(&AttributeInventory::default())
    }

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn spans(s: &str) -> Vec<(usize, usize, usize)> {
        chunk_noun_phrases(&words(s), &lex())
            .into_iter()
            .map(|n| (n.start, n.end, n.head))
            .collect()
    }

    #[test]
    fn single_phrase_with_modifiers() {
        assert_eq!(spans("add a black striped jacket"), [(1, 5, 4)]);
    }

    #[test]
    fn possessive_opens_a_phrase() {
        assert_eq!(
            spans("swap your black leggings for white leggings"),
            [(1, 4, 3), (5, 7, 6)]
        );
    }

    #[test]
    fn no_nouns_no_phrases() {
        assert!(spans("you look great").is_empty());
        assert!(spans("").is_empty());
    }

    #[test]
    fn trailing_adjectives_stay_outside() {
        // "jacket" ends the phrase; the final adjective is not part of it.
        assert_eq!(spans("the jacket great"), [(0, 2, 1)]);
    }

    #[test]
    fn unknown_tokens_break_phrases() {
        assert_eq!(spans("black fedora jacket"), [(2, 3, 2)]);
    }

    #[test]
    fn rule_order_reports_word_repeat_first() {
        let v = validate_sentence(&words("the black black jacket goes with the jacket"), FeedbackType::Good, &lex());
        assert_eq!(v.rule, Rule::WordRepeatInNp);
    }

    #[test]
    fn rule_b_does_not_apply_to_tips() {
        let s = words("your leggings complement your black leggings");
        assert!(validate_sentence(&s, FeedbackType::Tip, &lex()).valid);
        assert_eq!(validate_sentence(&s, FeedbackType::Good, &lex()).rule, Rule::NounRepeatGlobal);
    }

    #[test]
    fn rule_c_does_not_apply_to_good() {
        let s = words("swap your black leggings for black leggings");
        assert_eq!(validate_sentence(&s, FeedbackType::Good, &lex()).rule, Rule::NounRepeatGlobal);
        assert_eq!(validate_sentence(&s, FeedbackType::Tip, &lex()).rule, Rule::FullNpRepeat);
    }

    #[test]
    fn vocabulary_tags_like_the_lexicon() {
        let l = lex();
        let vocab = Vocabulary::from_tokens(l.keys().cloned().collect(), &l).unwrap();
        let s = words("add a black striped black jacket");
        assert_eq!(validate_sentence(&s, FeedbackType::Tip, &vocab), validate_sentence(&s, FeedbackType::Tip, &l));
    }

    fn word_pool() -> Vec<&'static str> {
        vec![
            "the", "a", "your", "black", "red", "striped", "jacket", "jeans", "boots", "looks", "with", "for", "two",
            "great", "well", "fedora",
        ]
    }

    proptest! {
        #[test]
        fn chunks_are_disjoint_ordered_and_cover_nouns(idx in proptest::collection::vec(0usize..16, 0..14)) {
            let pool = word_pool();
            let s: Vec<&str> = idx.iter().map(|&i| pool[i]).collect();
            let l = lex();
            let nps = chunk_noun_phrases(&s, &l);
            let mut last_end = 0;
            for np in &nps {
                prop_assert!(np.start < np.end && np.start >= last_end);
                prop_assert_eq!(l.tag(s[np.head]), Pos::Noun);
                prop_assert_eq!(np.head, np.end - 1);
                last_end = np.end;
            }
            for (j, w) in s.iter().enumerate() {
                if l.tag(w) == Pos::Noun {
                    prop_assert!(nps.iter().any(|n| n.start <= j && j < n.end));
                }
            }
        }

        #[test]
        fn verdict_is_consistent(idx in proptest::collection::vec(0usize..16, 0..14), good in any::<bool>()) {
            let pool = word_pool();
            let s: Vec<&str> = idx.iter().map(|&i| pool[i]).collect();
            let t = if good { FeedbackType::Good } else { FeedbackType::Tip };
            let v = validate_sentence(&s, t, &lex());
            prop_assert_eq!(v.valid, v.rule == Rule::None);
            prop_assert_eq!(v.valid, v.evidence.is_empty());
            prop_assert_eq!(validate_sentence(&s, t, &lex()), v);
        }
    }
}
