use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataPack, Relation};
use crate::error::{Error, Result};

/// Left text with a preferred and a less relevant right text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pair {
    pub left: String,
    pub pos: String,
    pub neg: String,
    pub pos_label: u32,
    pub neg_label: u32,
}

/// Every relation of one left id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListGroup {
    pub left: String,
    pub rights: Vec<String>,
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    Pointwise(Vec<Relation>),
    Pairwise(Vec<Pair>),
    Listwise(ListGroup),
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::Pointwise(v) => v.len(),
            Batch::Pairwise(v) => v.len(),
            Batch::Listwise(g) => g.rights.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListOrder {
    /// Training order: groups shuffled with the given seed.
    Shuffled(u64),
    /// Evaluation order: left id ascending.
    Stable,
}

fn check_batch_size(batch_size: usize) -> Result<()> {
    if batch_size < 1 {
        return Err(Error::config("batch_size must be >= 1"));
    }
    Ok(())
}

pub fn pointwise_batches<T>(pack: &DataPack<T>, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    check_batch_size(batch_size)?;
    let mut rels = pack.relations().to_vec();
    rels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(rels
        .chunks(batch_size)
        .map(|c| Batch::Pointwise(c.to_vec()))
        .collect())
}

/// Label-ordered pairs per left id. Each relation that outranks at least one
/// sibling gets up to `num_neg_per_pos` lower-labeled siblings, sampled
/// without replacement.
pub fn pairwise_batches<T>(
    pack: &DataPack<T>,
    num_neg_per_pos: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Batch>> {
    check_batch_size(batch_size)?;
    if num_neg_per_pos < 1 {
        return Err(Error::config("num_neg_per_pos must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for (left, rels) in pack.groups() {
        for pos in &rels {
            let lower: Vec<&&Relation> = rels.iter().filter(|r| r.label < pos.label).collect();
            if lower.is_empty() {
                continue;
            }
            let amount = num_neg_per_pos.min(lower.len());
            let mut picked = index::sample(&mut rng, lower.len(), amount).into_vec();
            picked.sort_unstable();
            for i in picked {
                let neg = lower[i];
                pairs.push(Pair {
                    left: left.to_string(),
                    pos: pos.right.clone(),
                    neg: neg.right.clone(),
                    pos_label: pos.label,
                    neg_label: neg.label,
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoTrainablePairs);
    }
    pairs.shuffle(&mut rng);
    Ok(pairs
        .chunks(batch_size)
        .map(|c| Batch::Pairwise(c.to_vec()))
        .collect())
}

pub fn listwise_batches<T>(pack: &DataPack<T>, order: ListOrder) -> Vec<Batch> {
    let mut groups: Vec<ListGroup> = pack
        .groups()
        .into_iter()
        .map(|(left, rels)| ListGroup {
            left: left.to_string(),
            rights: rels.iter().map(|r| r.right.clone()).collect(),
            labels: rels.iter().map(|r| r.label).collect(),
        })
        .collect();
    if let ListOrder::Shuffled(seed) = order {
        groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    groups.into_iter().map(Batch::Listwise).collect()
}
