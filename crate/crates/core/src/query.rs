//! Bag-of-words query encoding over the training-query dictionary.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{from_json_slice, Error, Result};
use crate::MAX_QUERY_WORDS;

/// Lowercases, splits on whitespace and strips ASCII punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| !c.is_ascii_punctuation())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Token → index map, indices assigned in lexicographic token order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dictionary {
    word_to_index: BTreeMap<String, usize>,
}

impl Dictionary {
    pub fn build<S: AsRef<str>>(training_queries: &[S]) -> Result<Self> {
        if training_queries.is_empty() {
            return Err(Error::EmptyInput("no training queries".into()));
        }
        let words: std::collections::BTreeSet<String> = training_queries
            .iter()
            .flat_map(|q| tokenize(q.as_ref()))
            .collect();
        Ok(Self {
            word_to_index: words.into_iter().enumerate().map(|(i, w)| (w, i)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.word_to_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_to_index.is_empty()
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        self.word_to_index.get(word).copied()
    }

    pub fn words(&self) -> impl Iterator<Item = (&str, usize)> {
        self.word_to_index.iter().map(|(w, &i)| (w.as_str(), i))
    }

    /// Parses a persisted dictionary and checks that its indices are a
    /// bijection onto `0..len`.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let dict: Dictionary = from_json_slice(bytes)?;
        let mut seen = vec![false; dict.len()];
        for (word, idx) in dict.words() {
            match seen.get_mut(idx) {
                Some(slot) if !*slot => *slot = true,
                _ => {
                    return Err(Error::Schema {
                        path: word.to_string(),
                        message: format!("index {idx} is out of range or repeated"),
                    })
                }
            }
        }
        Ok(dict)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, crate::json::to_canonical_string(self)).map_err(|e| Error::io(path, e))
    }
}

/// Binary multi-hot encoding of a query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryVector {
    pub values: Vec<f64>,
    /// The query had words, but none of them are in the dictionary.
    pub oov_warning: bool,
}

impl QueryVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
            oov_warning: false,
        }
    }

    pub fn nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Encodes `query` as a multi-hot vector. Only the first eight words are
/// used; unknown words are dropped.
pub fn encode_query(query: &str, dict: &Dictionary) -> QueryVector {
    let tokens = tokenize(query);
    let mut v = QueryVector::zeros(dict.len());
    let mut known = 0;
    for tok in tokens.iter().take(MAX_QUERY_WORDS) {
        if let Some(i) = dict.index(tok) {
            v.values[i] = 1.0;
            known += 1;
        }
    }
    v.oov_warning = !tokens.is_empty() && known == 0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_queries_give_five_words() {
        let d = Dictionary::build(&["3d movies", "civil war spiderman"]).unwrap();
        assert_eq!(d.len(), 5);
        let order: Vec<(&str, usize)> = d.words().collect();
        assert_eq!(
            order,
            [
                ("3d", 0),
                ("civil", 1),
                ("movies", 2),
                ("spiderman", 3),
                ("war", 4)
            ]
        );
        let v = encode_query("3d movies", &d);
        assert_eq!(v.values, [1.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(!v.oov_warning);
    }

    #[test]
    fn dedup_and_determinism() {
        assert_eq!(Dictionary::build(&["a a a"]).unwrap().len(), 1);
        let qs = [
            "ariana grande focus instrumental",
            "ark survival evolved dragon",
        ];
        assert_eq!(
            Dictionary::build(&qs).unwrap(),
            Dictionary::build(&qs).unwrap()
        );
        assert!(matches!(
            Dictionary::build::<&str>(&[]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn empty_and_oov_queries() {
        let d = Dictionary::build(&["3d movies"]).unwrap();
        let empty = encode_query("", &d);
        assert_eq!(empty.nonzero(), 0);
        assert!(!empty.oov_warning);
        let oov = encode_query("zzz qqq", &d);
        assert_eq!(oov.nonzero(), 0);
        assert!(oov.oov_warning);
    }

    #[test]
    fn tokenizer_normalizes() {
        assert_eq!(
            tokenize("  Civil-War, SPIDERMAN! "),
            ["civilwar", "spiderman"]
        );
        assert_eq!(tokenize("... !!"), Vec::<String>::new());
    }

    #[test]
    fn only_eight_words_count() {
        let words: Vec<String> = (0..12).map(|i| format!("w{i:02}")).collect();
        let d = Dictionary::build(&[words.join(" ")]).unwrap();
        assert_eq!(encode_query(&words.join(" "), &d).nonzero(), 8);
    }

    #[test]
    fn persisted_dictionary_round_trip() {
        let d = Dictionary::build(&["3d movies", "civil war spiderman"]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dictionary.json");
        d.save(&path).unwrap();
        assert_eq!(Dictionary::load(&path).unwrap(), d);
        assert!(Dictionary::parse(br#"{"a": 0, "b": 0}"#).is_err());
        assert!(Dictionary::parse(br#"{"a": 1}"#).is_err());
    }

    proptest! {
        #[test]
        fn order_invariant_idempotent_and_bounded(
            words in proptest::collection::vec("[a-e]{1,3}", 0..12),
            seed in any::<u64>(),
        ) {
            let d = Dictionary::build(&["a b c d e aa bb cc", "ab ba cd dc eee"]).unwrap();
            let q = words.join(" ");
            let v1 = encode_query(&q, &d);
            prop_assert_eq!(&v1, &encode_query(&q, &d));
            prop_assert!(v1.nonzero() <= 8.min(d.len()));
            if words.len() <= 8 {
                let mut shuffled = words.clone();
                use rand::{seq::SliceRandom, SeedableRng};
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                prop_assert_eq!(v1, encode_query(&shuffled.join(" "), &d));
            }
        }
    }
}
