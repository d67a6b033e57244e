use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};

/// Reserved index for padding.
pub const PAD_INDEX: usize = 0;
/// Reserved index for out-of-vocabulary terms.
pub const OOV_INDEX: usize = 1;

/// Splits on Unicode whitespace; punctuation stays attached.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

fn simple_lower(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

pub fn lowercase(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .map(|t| t.chars().map(simple_lower).collect())
        .collect()
}

pub fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Strips punctuation characters; tokens left empty are dropped.
pub fn punc_removal(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .map(|t| t.chars().filter(|&c| !is_punctuation(c)).collect::<String>())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Letter trigrams of `#token#`, in order, duplicates kept.
pub fn word_hashing(token: &str) -> Result<Vec<String>> {
    if token.is_empty() {
        return Err(Error::config("word hashing needs a non-empty token"));
    }
    let chars: Vec<char> = std::iter::once('#')
        .chain(token.chars())
        .chain(std::iter::once('#'))
        .collect();
    Ok(chars.windows(3).map(|w| w.iter().collect()).collect())
}

/// Truncates the tail beyond `length` and right-pads shorter input.
pub fn fixed_length<T: Clone>(items: &[T], length: usize, pad: T) -> Result<Vec<T>> {
    if length < 1 {
        return Err(Error::config("fixed_length requires length >= 1"));
    }
    let mut out: Vec<T> = items.iter().take(length).cloned().collect();
    out.resize(length, pad);
    Ok(out)
}

/// Keep-set of terms whose corpus frequency reaches `min_freq`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyFilter {
    pub min_freq: usize,
    pub keep: BTreeSet<String>,
}

impl FrequencyFilter {
    pub fn fit<S: AsRef<[String]>>(corpus: &[S], min_freq: usize) -> Result<Self> {
        if min_freq < 1 {
            return Err(Error::config("frequency_filter requires min_freq >= 1"));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in corpus {
            for t in doc.as_ref() {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let keep = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_freq)
            .map(|(t, _)| t.to_string())
            .collect();
        Ok(FrequencyFilter { min_freq, keep })
    }

    pub fn transform(&self, tokens: &[String]) -> Vec<String> {
        tokens
            .iter()
            .filter(|t| self.keep.contains(*t))
            .cloned()
            .collect()
    }
}

/// Term → index map. Index 0 is padding and 1 is out-of-vocabulary; real
/// terms get 2, 3, … by descending corpus frequency, ties lexicographic.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn fit<S: AsRef<[String]>>(corpus: &[S]) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in corpus {
            for t in doc.as_ref() {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_terms(ranked.into_iter().map(|(t, _)| t.to_string()).collect())
    }

    fn from_terms(terms: Vec<String>) -> Self {
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + 2))
            .collect();
        Vocabulary { terms, index }
    }

    /// Number of rows an embedding table needs, reserved slots included.
    pub fn size(&self) -> usize {
        self.terms.len() + 2
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn get(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> Option<&str> {
        index.checked_sub(2).and_then(|i| self.terms.get(i)).map(String::as_str)
    }

    pub fn transform(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.get(t).unwrap_or(OOV_INDEX))
            .collect()
    }

    /// `(term, index)` pairs in index order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, usize)> {
        self.terms.iter().enumerate().map(|(i, t)| (t.as_str(), i + 2))
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Doc<'a> {
            terms: Vec<(&'a str, usize)>,
        }
        Doc {
            terms: self.entries().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Doc {
            terms: Vec<(String, usize)>,
        }
        let mut doc = Doc::deserialize(d)?;
        doc.terms.sort_by_key(|(_, i)| *i);
        for (pos, (term, idx)) in doc.terms.iter().enumerate() {
            if *idx != pos + 2 {
                return Err(serde::de::Error::custom(format!(
                    "vocabulary indices must be contiguous from 2; `{term}` has {idx}"
                )));
            }
        }
        Ok(Vocabulary::from_terms(
            doc.terms.into_iter().map(|(t, _)| t).collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Hello, World"), toks(&["Hello,", "World"]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a  b"), toks(&["a", "b"]));
    }

    #[test]
    fn lowercase_examples() {
        assert_eq!(lowercase(&toks(&["Hello", "WORLD"])), toks(&["hello", "world"]));
        assert!(lowercase(&[]).is_empty());
        assert_eq!(lowercase(&toks(&["already"])), toks(&["already"]));
    }

    #[test]
    fn punc_removal_examples() {
        assert_eq!(
            punc_removal(&toks(&["it's", "a", "test", "."])),
            toks(&["its", "a", "test"])
        );
        assert!(punc_removal(&toks(&["..."])).is_empty());
        assert_eq!(punc_removal(&toks(&["plain"])), toks(&["plain"]));
        assert_eq!(punc_removal(&toks(&["«quoted»", "—"])), toks(&["quoted"]));
    }

    #[test]
    fn frequency_filter_examples() {
        let corpus = vec![toks(&["a", "b", "a"]), toks(&["a", "c"])];
        let f = FrequencyFilter::fit(&corpus, 2).unwrap();
        assert_eq!(f.keep, BTreeSet::from(["a".to_string()]));
        assert_eq!(f.transform(&toks(&["a", "b", "a"])), toks(&["a", "a"]));

        let all = FrequencyFilter::fit(&corpus, 1).unwrap();
        assert_eq!(all.keep.len(), 3);
        assert_eq!(all.transform(&toks(&["c", "b"])), toks(&["c", "b"]));

        let empty = FrequencyFilter::fit::<Vec<String>>(&[], 1).unwrap();
        assert!(empty.keep.is_empty());
        assert!(empty.transform(&toks(&["x"])).is_empty());

        assert!(FrequencyFilter::fit(&corpus, 0).is_err());
    }

    #[test]
    fn vocabulary_examples() {
        let v = Vocabulary::fit(&[toks(&["b", "a", "b"])]);
        assert_eq!(v.get("b"), Some(2));
        assert_eq!(v.get("a"), Some(3));
        assert_eq!(v.transform(&toks(&["a", "b"])), vec![3, 2]);
        assert_eq!(v.transform(&toks(&["zzz"])), vec![OOV_INDEX]);
        assert!(v.transform(&[]).is_empty());

        let tie = Vocabulary::fit(&[toks(&["a"]), toks(&["b"])]);
        assert_eq!((tie.get("a"), tie.get("b")), (Some(2), Some(3)));

        let empty = Vocabulary::fit::<Vec<String>>(&[]);
        assert_eq!(empty.size(), 2);
        assert_eq!(empty.term_count(), 0);
    }

    #[test]
    fn vocabulary_json_shape() {
        let v = Vocabulary::fit(&[toks(&["b", "a", "b"])]);
        let json = serde_json::to_value(&v).unwrap();
        assert_eq!(json, serde_json::json!({"terms": [["b", 2], ["a", 3]]}));
        let back: Vocabulary = serde_json::from_value(json).unwrap();
        assert_eq!(back, v);
        let bad = serde_json::json!({"terms": [["b", 0]]});
        assert!(serde_json::from_value::<Vocabulary>(bad).is_err());
    }

    #[test]
    fn word_hashing_examples() {
        assert_eq!(word_hashing("good").unwrap(), toks(&["#go", "goo", "ood", "od#"]));
        assert_eq!(word_hashing("a").unwrap(), toks(&["#a#"]));
        assert_eq!(word_hashing("ab").unwrap(), toks(&["#ab", "ab#"]));
        assert!(word_hashing("").is_err());
    }

    #[test]
    fn fixed_length_examples() {
        assert_eq!(fixed_length(&[5, 6, 7], 2, 0).unwrap(), vec![5, 6]);
        assert_eq!(fixed_length(&[5], 3, 0).unwrap(), vec![5, 0, 0]);
        assert_eq!(fixed_length::<usize>(&[], 2, 0).unwrap(), vec![0, 0]);
        assert!(fixed_length(&[1], 0, 0).is_err());
    }
}
