use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CorpusError;

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

/// Default strict lower bound on token frequency (a token is kept when it
/// occurs more than this many times).
pub const DEFAULT_MIN_COUNT_EXCLUSIVE: usize = 5;

/// Coarse part-of-speech classes used by the noun-phrase chunker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Noun,
    Adj,
    Det,
    Verb,
    Prep,
    Pron,
    Conj,
    Num,
    Other,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Pos::Noun => "NOUN",
            Pos::Adj => "ADJ",
            Pos::Det => "DET",
            Pos::Verb => "VERB",
            Pos::Prep => "PREP",
            Pos::Pron => "PRON",
            Pos::Conj => "CONJ",
            Pos::Num => "NUM",
            Pos::Other => "OTHER",
        };
        f.write_str(s)
    }
}

impl FromStr for Pos {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "NOUN" => Pos::Noun,
            "ADJ" => Pos::Adj,
            "DET" => Pos::Det,
            "VERB" => Pos::Verb,
            "PREP" => Pos::Prep,
            "PRON" => Pos::Pron,
            "CONJ" => Pos::Conj,
            "NUM" => Pos::Num,
            "OTHER" => Pos::Other,
            _ => return Err(CorpusError::Format(format!("unknown POS tag {s:?}"))),
        })
    }
}

/// Token → POS assignments for a closed vocabulary.
pub type Lexicon = BTreeMap<String, Pos>;

/// Token/id mapping with the three framing specials and a POS tag per token.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pos: Vec<Pos>,
}

#[derive(Serialize, Deserialize)]
struct Specials {
    bos: String,
    eos: String,
    unk: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    tokens: Vec<String>,
    pos: BTreeMap<String, Pos>,
    specials: Specials,
}

impl Vocabulary {
    pub const BOS: usize = 0;
    pub const EOS: usize = 1;
    pub const UNK: usize = 2;

    /// Builds a vocabulary from non-special tokens. Order is preserved; ids
    /// start at 3.
    pub fn from_tokens(words: Vec<String>, lexicon: &Lexicon) -> Result<Self, CorpusError> {
        let mut tokens = vec![BOS_TOKEN.to_owned(), EOS_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
        let mut pos = vec![Pos::Other; 3];
        for w in words {
            let tag = *lexicon
                .get(&w)
                .ok_or_else(|| CorpusError::MissingPos(w.clone()))?;
            tokens.push(w);
            pos.push(tag);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::Format(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index, pos })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of non-special tokens.
    pub fn num_words(&self) -> usize {
        self.tokens.len() - 3
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < 3
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// POS of a token; tokens outside the vocabulary are `Other`.
    pub fn pos_of(&self, token: &str) -> Pos {
        self.id(token).map(|i| self.pos[i]).unwrap_or(Pos::Other)
    }

    pub fn pos_of_id(&self, id: usize) -> Pos {
        self.pos.get(id).copied().unwrap_or(Pos::Other)
    }

    /// Frames with `<bos>` … `<eos>`; unknown tokens map to `<unk>`.
    pub fn encode<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(sentence.len() + 2);
        ids.push(Self::BOS);
        ids.extend(sentence.iter().map(|t| self.id_or_unk(t.as_ref())));
        ids.push(Self::EOS);
        ids
    }

    /// Inverse of [`encode`](Self::encode): strips a leading `<bos>` and a
    /// trailing `<eos>`.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>, CorpusError> {
        let mut body = ids;
        if body.first() == Some(&Self::BOS) {
            body = &body[1..];
        }
        if body.last() == Some(&Self::EOS) {
            body = &body[..body.len() - 1];
        }
        body.iter()
            .map(|&id| {
                self.token(id).map(str::to_owned).ok_or(CorpusError::IdOutOfRange {
                    id,
                    size: self.len(),
                })
            })
            .collect()
    }

    fn to_file(&self) -> VocabFile {
        VocabFile {
            tokens: self.tokens.clone(),
            pos: self
                .tokens
                .iter()
                .cloned()
                .zip(self.pos.iter().copied())
                .collect(),
            specials: Specials {
                bos: BOS_TOKEN.into(),
                eos: EOS_TOKEN.into(),
                unk: UNK_TOKEN.into(),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CorpusError> {
        let file: VocabFile = serde_json::from_str(s)?;
        if file.tokens.len() < 3
            || file.tokens[0] != file.specials.bos
            || file.tokens[1] != file.specials.eos
            || file.tokens[2] != file.specials.unk
        {
            return Err(CorpusError::Format(
                "vocabulary must start with the bos, eos, unk specials".into(),
            ));
        }
        let lexicon: Lexicon = file.pos;
        Self::from_tokens(file.tokens[3..].to_vec(), &lexicon)
    }

    /// Hex SHA-256 of the canonical JSON form; checkpoints pin this value.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        hex::encode(digest)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_json()).map_err(|e| CorpusError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let s = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Keeps tokens occurring more than `min_count_exclusive` times; kept tokens
/// are sorted lexicographically after the specials.
pub fn build_vocabulary<S: AsRef<str>>(
    sentences: &[Vec<S>],
    min_count_exclusive: usize,
    lexicon: &Lexicon,
) -> Result<Vocabulary, CorpusError> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in sentences {
        for t in s {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    let kept: Vec<String> = counts
        .into_iter()
        .filter(|&(t, c)| c > min_count_exclusive && ![BOS_TOKEN, EOS_TOKEN, UNK_TOKEN].contains(&t))
        .map(|(t, _)| t.to_owned())
        .collect();
    Vocabulary::from_tokens(kept, lexicon)
}

/// Lexicon JSON: `{"token": "NOUN", ...}`.
pub fn load_lexicon(path: &Path) -> Result<Lexicon, CorpusError> {
    let s = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

pub fn save_lexicon(lexicon: &Lexicon, path: &Path) -> Result<(), CorpusError> {
    let s = serde_json::to_string_pretty(lexicon)?;
    std::fs::write(path, s).map_err(|e| CorpusError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex(words: &[&str]) -> Lexicon {
        words.iter().map(|w| (w.to_string(), Pos::Noun)).collect()
    }

    fn repeat(word: &str, n: usize) -> Vec<Vec<String>> {
        (0..n).map(|_| vec![word.to_owned()]).collect()
    }

    #[test]
    fn threshold_is_strict() {
        let mut corpus = repeat("six", 6);
        corpus.extend(repeat("five", 5));
        let v = build_vocabulary(&corpus, 5, &lex(&["six", "five"])).unwrap();
        assert!(v.id("six").is_some());
        assert!(v.id("five").is_none());
        assert_eq!(v.encode(&["five"]), vec![0, Vocabulary::UNK, 1]);
    }

    #[test]
    fn empty_corpus_has_only_specials() {
        let v = build_vocabulary::<String>(&[], 5, &Lexicon::new()).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.num_words(), 0);
        assert_eq!(v.encode::<&str>(&[]), vec![Vocabulary::BOS, Vocabulary::EOS]);
    }

    #[test]
    fn missing_pos_is_reported() {
        let corpus = repeat("fedora", 9);
        assert_eq!(
            build_vocabulary(&corpus, 5, &Lexicon::new()).unwrap_err(),
            CorpusError::MissingPos("fedora".into())
        );
    }

    #[test]
    fn unknown_word_maps_to_unk_and_decode_checks_range() {
        let corpus = repeat("jacket", 7);
        let v = build_vocabulary(&corpus, 5, &lex(&["jacket"])).unwrap();
        assert_eq!(v.encode(&["fedora"])[1], Vocabulary::UNK);
        assert_eq!(
            v.decode(&[0, 99]).unwrap_err(),
            CorpusError::IdOutOfRange { id: 99, size: 4 }
        );
        assert_eq!(v.pos_of("<unk>"), Pos::Other);
    }

    #[test]
    fn json_round_trip_preserves_hash() {
        let mut corpus = repeat("jacket", 7);
        corpus.extend(repeat("red", 8));
        let mut l = lex(&["jacket"]);
        l.insert("red".into(), Pos::Adj);
        let v = build_vocabulary(&corpus, 5, &l).unwrap();
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        assert_eq!(back.pos_of("red"), Pos::Adj);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(words in prop::collection::vec(0usize..6, 0..12)) {
            let names = ["a", "b", "c", "d", "e", "f"];
            let corpus: Vec<Vec<String>> = names.iter().flat_map(|n| repeat(n, 6)).collect();
            let v = build_vocabulary(&corpus, 5, &lex(&names)).unwrap();
            let s: Vec<String> = words.iter().map(|&i| names[i].to_owned()).collect();
            let ids = v.encode(&s);
            prop_assert_eq!(ids.first(), Some(&Vocabulary::BOS));
            prop_assert_eq!(ids.last(), Some(&Vocabulary::EOS));
            prop_assert_eq!(v.decode(&ids).unwrap(), s);
        }
    }
}
