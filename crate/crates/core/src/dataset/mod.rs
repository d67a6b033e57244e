//! Corpus and relation ingestion, data packs, batching and corpus statistics.

mod batch;
mod embedding;
mod io;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{Pipeline, Sequence, PAD_INDEX};

pub use batch::{
    listwise_batches, pairwise_batches, pointwise_batches, Batch, ListGroup, ListOrder, Pair,
};
pub use embedding::{load_embeddings, read_embeddings, random_embeddings, EmbeddingMatrix};
pub use io::{load_corpus, load_relations, read_corpus, read_relations};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub left: String,
    pub right: String,
    pub label: u32,
}

impl Relation {
    pub fn new(left: impl Into<String>, right: impl Into<String>, label: u32) -> Self {
        Relation {
            left: left.into(),
            right: right.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Left and right corpora plus a labeled relation table. `T` is the raw
/// text for freshly loaded packs and a [`Sequence`] once processed.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPack<T = Sequence> {
    left: BTreeMap<String, T>,
    right: BTreeMap<String, T>,
    relations: Vec<Relation>,
    split: Split,
}

impl<T> DataPack<T> {
    /// Assembles a pack, rejecting dangling ids and empty relation tables.
    pub fn new(
        left: BTreeMap<String, T>,
        right: BTreeMap<String, T>,
        relations: Vec<Relation>,
        split: Split,
    ) -> Result<Self> {
        if relations.is_empty() {
            return Err(Error::data("a data pack needs at least one relation"));
        }
        let mut missing: Vec<String> = Vec::new();
        for r in &relations {
            if !left.contains_key(&r.left) {
                missing.push(format!("left `{}`", r.left));
            }
            if !right.contains_key(&r.right) {
                missing.push(format!("right `{}`", r.right));
            }
        }
        if !missing.is_empty() {
            missing.dedup();
            return Err(Error::data(format!(
                "relations reference unknown ids: {}",
                missing.join(", ")
            )));
        }
        Ok(DataPack {
            left,
            right,
            relations,
            split,
        })
    }

    pub fn left(&self) -> &BTreeMap<String, T> {
        &self.left
    }

    pub fn right(&self) -> &BTreeMap<String, T> {
        &self.right
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn left_text(&self, id: &str) -> &T {
        &self.left[id]
    }

    pub fn right_text(&self, id: &str) -> &T {
        &self.right[id]
    }

    /// Relations grouped by left id, ascending, each in file order.
    pub fn groups(&self) -> BTreeMap<&str, Vec<&Relation>> {
        let mut out: BTreeMap<&str, Vec<&Relation>> = BTreeMap::new();
        for r in &self.relations {
            out.entry(r.left.as_str()).or_default().push(r);
        }
        out
    }
}

impl DataPack<String> {
    /// Texts referenced by the relations, left ids ascending then right ids
    /// ascending. This is the corpus a pipeline is fitted on.
    pub fn referenced_texts(&self) -> Vec<&str> {
        let lefts: HashSet<&str> = self.relations.iter().map(|r| r.left.as_str()).collect();
        let rights: HashSet<&str> = self.relations.iter().map(|r| r.right.as_str()).collect();
        let mut out: Vec<&str> = self
            .left
            .iter()
            .filter(|(k, _)| lefts.contains(k.as_str()))
            .map(|(_, v)| v.as_str())
            .collect();
        out.extend(
            self.right
                .iter()
                .filter(|(k, _)| rights.contains(k.as_str()))
                .map(|(_, v)| v.as_str()),
        );
        out
    }

    /// Runs every referenced text through a fitted pipeline.
    pub fn process(&self, pipeline: &Pipeline) -> Result<DataPack<Sequence>> {
        let lefts: HashSet<&str> = self.relations.iter().map(|r| r.left.as_str()).collect();
        let rights: HashSet<&str> = self.relations.iter().map(|r| r.right.as_str()).collect();
        let run = |map: &BTreeMap<String, String>, keep: &HashSet<&str>| {
            map.iter()
                .filter(|(k, _)| keep.contains(k.as_str()))
                .map(|(k, v)| Ok((k.clone(), pipeline.transform(v)?)))
                .collect::<Result<BTreeMap<_, _>>>()
        };
        DataPack::new(
            run(&self.left, &lefts)?,
            run(&self.right, &rights)?,
            self.relations.clone(),
            self.split,
        )
    }
}

/// Smoothed inverse document frequency over the right corpus:
/// `idf(t) = ln((N + 1) / (df(t) + 1)) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Idf {
    documents: usize,
    df: HashMap<usize, usize>,
}

impl Idf {
    pub fn weight(&self, term: usize) -> f64 {
        let df = self.df.get(&term).copied().unwrap_or(0);
        ((self.documents as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    /// Dense table indexed by term index.
    pub fn to_table(&self, vocab_size: usize) -> Vec<f64> {
        (0..vocab_size).map(|t| self.weight(t)).collect()
    }
}

pub fn idf_weights(pack: &DataPack<Sequence>) -> Result<Idf> {
    if pack.right.is_empty() {
        return Err(Error::data("idf needs a non-empty right corpus"));
    }
    let mut df: HashMap<usize, usize> = HashMap::new();
    for seq in pack.right.values() {
        let indices = seq
            .as_indices()
            .ok_or_else(|| Error::data("idf needs index sequences"))?;
        let distinct: HashSet<usize> = indices.iter().copied().filter(|&i| i != PAD_INDEX).collect();
        for t in distinct {
            *df.entry(t).or_default() += 1;
        }
    }
    Ok(Idf {
        documents: pack.right.len(),
        df,
    })
}
