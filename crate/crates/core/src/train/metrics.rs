use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::DataPack;
use crate::error::{Error, Result};
use crate::models::ModelInstance;
use crate::text::Sequence;

/// One scored right text of a ranked list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub right: String,
    pub score: f64,
    pub label: u32,
}

/// Sorts by score descending, ties by right id ascending.
pub fn rank(mut items: Vec<RankedItem>) -> Vec<RankedItem> {
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.right.cmp(&b.right)));
    items
}

/// Ranked right ids for a plain id → score map.
pub fn rank_scores(scores: &BTreeMap<String, f64>) -> Vec<String> {
    let items = scores
        .iter()
        .map(|(id, &score)| RankedItem {
            right: id.clone(),
            score,
            label: 0,
        })
        .collect();
    rank(items).into_iter().map(|i| i.right).collect()
}

fn relevant(label: u32) -> bool {
    label > 0
}

/// Relevant items in the top `min(k, n)`, divided by `k`.
pub fn precision_at_k(labels: &[u32], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hits = labels.iter().take(k).filter(|&&l| relevant(l)).count();
    hits as f64 / k as f64
}

pub fn average_precision(labels: &[u32]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        if relevant(l) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

fn dcg(labels: &[u32], k: usize) -> f64 {
    labels
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &l)| (2f64.powi(l as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// Exponential-gain NDCG; 0 when no label is positive.
pub fn ndcg_at_k(labels: &[u32], k: usize) -> f64 {
    let mut ideal = labels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal, k);
    if idcg == 0.0 {
        0.0
    } else {
        dcg(labels, k) / idcg
    }
}

pub fn reciprocal_rank(labels: &[u32]) -> f64 {
    labels
        .iter()
        .position(|&l| relevant(l))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn mean_average_precision(queries: &[Vec<u32>]) -> f64 {
    mean(queries.iter().map(|q| average_precision(q)))
}

pub fn mrr(queries: &[Vec<u32>]) -> f64 {
    mean(queries.iter().map(|q| reciprocal_rank(q)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    PrecisionAt(usize),
    Map,
    NdcgAt(usize),
    Mrr,
}

pub const METRIC_NAMES: &str = "ndcg@k, p@k (or precision@k), map, mrr";

impl Metric {
    /// Value for one query's labels, already in ranked order.
    pub fn per_query(&self, labels: &[u32]) -> f64 {
        match *self {
            Metric::PrecisionAt(k) => precision_at_k(labels, k),
            Metric::Map => average_precision(labels),
            Metric::NdcgAt(k) => ndcg_at_k(labels, k),
            Metric::Mrr => reciprocal_rank(labels),
        }
    }

    /// Mean of [`Metric::per_query`] over queries.
    pub fn compute(&self, queries: &[Vec<u32>]) -> f64 {
        mean(queries.iter().map(|q| self.per_query(q)))
    }

    pub fn parse_list<S: AsRef<str>>(names: &[S]) -> Result<Vec<Metric>> {
        names.iter().map(|n| n.as_ref().parse()).collect()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::PrecisionAt(k) => write!(f, "p@{k}"),
            Metric::Map => write!(f, "map"),
            Metric::NdcgAt(k) => write!(f, "ndcg@{k}"),
            Metric::Mrr => write!(f, "mrr"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownMetric {
            name: s.to_string(),
            valid: METRIC_NAMES.to_string(),
        };
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "map" => return Ok(Metric::Map),
            "mrr" => return Ok(Metric::Mrr),
            _ => {}
        }
        let (head, k) = lower.split_once('@').ok_or_else(unknown)?;
        let k: usize = k.parse().ok().filter(|&k| k >= 1).ok_or_else(unknown)?;
        match head {
            "ndcg" => Ok(Metric::NdcgAt(k)),
            "p" | "precision" => Ok(Metric::PrecisionAt(k)),
            _ => Err(unknown()),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ranked label lists of every left id (ascending) in `pack`.
pub fn ranked_labels(model: &ModelInstance, pack: &DataPack<Sequence>) -> Result<Vec<Vec<u32>>> {
    pack.groups()
        .into_iter()
        .map(|(left, rels)| {
            let l = pack.left_text(left);
            let items = rels
                .iter()
                .map(|r| {
                    Ok(RankedItem {
                        right: r.right.clone(),
                        score: model.score(l, pack.right_text(&r.right))?,
                        label: r.label,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(rank(items).into_iter().map(|i| i.label).collect())
        })
        .collect()
}

/// Scores every relation, ranks per left id and averages each metric over left ids.
pub fn evaluate(
    model: &ModelInstance,
    pack: &DataPack<Sequence>,
    metrics: &[Metric],
) -> Result<BTreeMap<String, f64>> {
    if metrics.is_empty() {
        return Err(Error::config("no metrics requested"));
    }
    if pack.relations().is_empty() {
        return Err(Error::data("cannot evaluate an empty pack"));
    }
    let queries = ranked_labels(model, pack)?;
    Ok(metrics.iter().map(|m| (m.to_string(), m.compute(&queries))).collect())
}
