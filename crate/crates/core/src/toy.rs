//! Seeded synthetic matching data for demos and tests.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Split;
use crate::error::{Error, Result};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const VOCAB_SIZE: usize = 120;
const QUERY_LEN: (usize, usize) = (3, 5);
const DOC_LEN: (usize, usize) = (8, 15);
/// A document is relevant when it shares at least this many distinct query tokens.
pub const RELEVANT_OVERLAP: usize = 2;

pub const CORPUS_LEFT: &str = "corpus_left.tsv";
pub const CORPUS_RIGHT: &str = "corpus_right.tsv";

pub fn relations_file(split: Split) -> &'static str {
    match split {
        Split::Train => "relations_train.tsv",
        Split::Valid => "relations_valid.tsv",
        Split::Test => "relations_test.tsv",
    }
}

/// Split of query `i`: six in ten train, two valid, two test.
pub fn split_of(query: usize) -> Split {
    match query % 10 {
        0..=5 => Split::Train,
        6 | 7 => Split::Valid,
        _ => Split::Test,
    }
}

/// File contents keyed by file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyData {
    pub files: Vec<(&'static str, String)>,
}

fn vocabulary(rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut words = BTreeSet::new();
    while words.len() < VOCAB_SIZE {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
            w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
        }
        words.insert(w);
    }
    words.into_iter().collect()
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

fn sentence(tokens: &[&str], end: char) -> String {
    let mut s = capitalize(tokens[0]);
    for t in &tokens[1..] {
        s.push(' ');
        s.push_str(t);
    }
    s.push(end);
    s
}

/// `queries` left texts with `docs` right texts each. A document's label is 1
/// iff it shares at least two distinct tokens with its query; filler tokens
/// never come from the query, so the planted overlap decides the label.
pub fn generate(queries: usize, docs: usize, seed: u64) -> Result<ToyData> {
    if queries < 1 || docs < 1 {
        return Err(Error::config("gen-toy needs at least one query and one document"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = vocabulary(&mut rng);
    let mut left = String::new();
    let mut right = String::new();
    let mut rels = [String::new(), String::new(), String::new()];
    for qi in 0..queries {
        let qlen = rng.gen_range(QUERY_LEN.0..=QUERY_LEN.1);
        let query: Vec<&str> = vocab.choose_multiple(&mut rng, qlen).map(String::as_str).collect();
        let qid = format!("q{qi:04}");
        writeln!(left, "{qid}\t{}", sentence(&query, '?')).unwrap();
        let filler: Vec<&str> = vocab
            .iter()
            .map(String::as_str)
            .filter(|w| !query.contains(w))
            .collect();
        for di in 0..docs {
            let overlap = rng.gen_range(0..=3usize).min(qlen);
            let len = rng.gen_range(DOC_LEN.0..=DOC_LEN.1);
            let mut tokens: Vec<&str> = query.choose_multiple(&mut rng, overlap).copied().collect();
            while tokens.len() < len {
                tokens.push(filler[rng.gen_range(0..filler.len())]);
            }
            tokens.shuffle(&mut rng);
            let did = format!("d{qi:04}_{di:03}");
            writeln!(right, "{did}\t{}", sentence(&tokens, '.')).unwrap();
            let label = u32::from(overlap >= RELEVANT_OVERLAP);
            let slot = match split_of(qi) {
                Split::Train => 0,
                Split::Valid => 1,
                Split::Test => 2,
            };
            writeln!(rels[slot], "{label}\t{qid}\t{did}").unwrap();
        }
    }
    let mut files = vec![(CORPUS_LEFT, left), (CORPUS_RIGHT, right)];
    for (split, text) in [Split::Train, Split::Valid, Split::Test].into_iter().zip(rels) {
        if !text.is_empty() {
            files.push((relations_file(split), text));
        }
    }
    Ok(ToyData { files })
}

/// Writes the generated files into `dir` (created if missing) and returns their paths.
pub fn write(dir: &Path, queries: usize, docs: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let data = generate(queries, docs, seed)?;
    fs::create_dir_all(dir)?;
    data.files
        .iter()
        .map(|(name, text)| {
            let p = dir.join(name);
            fs::write(&p, text)?;
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{read_corpus, read_relations};

    #[test]
    fn deterministic() {
        assert_eq!(generate(5, 4, 9).unwrap(), generate(5, 4, 9).unwrap());
        assert_ne!(generate(5, 4, 9).unwrap(), generate(5, 4, 10).unwrap());
    }

    #[test]
    fn tiny_pack() {
        let d = generate(1, 2, 0).unwrap();
        let names: Vec<&str> = d.files.iter().map(|f| f.0).collect();
        assert_eq!(names, vec![CORPUS_LEFT, CORPUS_RIGHT, "relations_train.tsv"]);
        let rels = read_relations(d.files[2].1.as_bytes(), Path::new("r")).unwrap();
        assert_eq!(rels.len(), 2);
    }

    #[test]
    fn labels_follow_overlap() {
        let d = generate(20, 10, 3).unwrap();
        let left = read_corpus(d.files[0].1.as_bytes(), Path::new("l")).unwrap();
        let right = read_corpus(d.files[1].1.as_bytes(), Path::new("r")).unwrap();
        let norm = |s: &str| -> BTreeSet<String> {
            s.split_whitespace()
                .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
                .collect()
        };
        let mut positives = 0;
        for (_, text) in &d.files[2..] {
            for r in read_relations(text.as_bytes(), Path::new("x")).unwrap() {
                let shared = norm(&left[&r.left]).intersection(&norm(&right[&r.right])).count();
                assert_eq!(r.label, u32::from(shared >= 2), "{r:?}");
                positives += r.label;
            }
        }
        assert!(positives > 20 && positives < 180);
    }
}
