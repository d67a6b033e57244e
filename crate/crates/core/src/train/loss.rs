use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_in_place, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Probability clamp for binary cross-entropy.
pub const PROB_FLOOR: f64 = 1e-10;
/// Floor under softmax probabilities before the log.
const SOFTMAX_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointwiseKind {
    Mse,
    Bce,
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::data(format!("{what}: {a} predictions but {b} targets")));
    }
    if a == 0 {
        return Err(Error::data(format!("{what}: empty input")));
    }
    Ok(())
}

fn check_binary(labels: &[f64]) -> Result<()> {
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::data("bce needs labels in {0, 1}"));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn pointwise_loss(predictions: &[f64], labels: &[f64], kind: PointwiseKind) -> Result<f64> {
    same_len(predictions.len(), labels.len(), "pointwise loss")?;
    let n = predictions.len() as f64;
    Ok(match kind {
        PointwiseKind::Mse => {
            predictions.iter().zip(labels).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n
        }
        PointwiseKind::Bce => {
            check_binary(labels)?;
            predictions
                .iter()
                .zip(labels)
                .map(|(&p, &y)| {
                    let pos = sigmoid(p).max(PROB_FLOOR).ln();
                    let neg = sigmoid(-p).max(PROB_FLOOR).ln();
                    -(y * pos + (1.0 - y) * neg)
                })
                .sum::<f64>()
                / n
        }
    })
}

pub fn pairwise_hinge(pos: &[f64], neg: &[f64], margin: f64) -> Result<f64> {
    same_len(pos.len(), neg.len(), "pairwise hinge")?;
    check_margin(margin)?;
    Ok(pos
        .iter()
        .zip(neg)
        .map(|(p, n)| (margin - p + n).max(0.0))
        .sum::<f64>()
        / pos.len() as f64)
}

pub(crate) fn check_margin(margin: f64) -> Result<()> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::config(format!("hinge margin must be > 0, got {margin}")));
    }
    Ok(())
}

/// Normalized targets for a group, or `None` if the group is skipped.
pub fn listwise_target(labels: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = labels.iter().sum();
    if labels.len() < 2 || total <= 0.0 || labels.iter().any(|&l| l < 0.0) {
        return None;
    }
    Some(labels.iter().map(|l| l / total).collect())
}

/// Mean over non-degenerate groups of the softmax cross-entropy against
/// label-proportional targets.
pub fn listwise_softmax_ce(groups: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut total = 0.0;
    let mut used = 0usize;
    for (scores, labels) in groups {
        same_len(scores.len(), labels.len(), "listwise loss")?;
        let Some(target) = listwise_target(labels) else {
            continue;
        };
        let mut p = scores.clone();
        softmax_in_place(&mut p);
        total -= target
            .iter()
            .zip(&p)
            .map(|(t, q)| t * q.max(SOFTMAX_FLOOR).ln())
            .sum::<f64>();
        used += 1;
    }
    if used == 0 {
        return Err(Error::data("listwise loss: every group is degenerate"));
    }
    Ok(total / used as f64)
}

fn column(values: &[f64]) -> Tensor {
    Tensor::new(vec![values.len(), 1], values.to_vec()).expect("non-empty column")
}

/// Mean pointwise loss of a [B, 1] score node.
pub fn pointwise_loss_node(g: &mut Graph, scores: NodeId, labels: &[f64], kind: PointwiseKind) -> Result<NodeId> {
    if labels.is_empty() {
        return Err(Error::data("pointwise loss: empty input"));
    }
    let y = g.constant(column(labels));
    let per = match kind {
        PointwiseKind::Mse => {
            let d = g.sub(scores, y);
            g.mul(d, d)
        }
        PointwiseKind::Bce => {
            check_binary(labels)?;
            let one_minus: Vec<f64> = labels.iter().map(|y| 1.0 - y).collect();
            let y_neg = g.constant(column(&one_minus));
            let p = g.sigmoid(scores);
            let neg_scores = g.scale(scores, -1.0);
            let q = g.sigmoid(neg_scores);
            let lp = g.safe_log(p, PROB_FLOOR);
            let lq = g.safe_log(q, PROB_FLOOR);
            let a = g.mul(y, lp);
            let b = g.mul(y_neg, lq);
            let s = g.add(a, b);
            g.scale(s, -1.0)
        }
    };
    Ok(g.mean_axis(per, 0))
}

/// Mean hinge over [B, 1] positive and negative score nodes.
pub fn hinge_node(g: &mut Graph, pos: NodeId, neg: NodeId, batch: usize, margin: f64) -> Result<NodeId> {
    check_margin(margin)?;
    let m = g.constant(Tensor::filled(vec![batch, 1], margin));
    let gap = g.sub(pos, neg);
    let raw = g.sub(m, gap);
    let h = g.relu(raw);
    Ok(g.mean_axis(h, 0))
}

/// Cross-entropy of one [1, N] score row against `labels`; `None` for a
/// degenerate group.
pub fn listwise_node(g: &mut Graph, scores: NodeId, labels: &[f64]) -> Option<NodeId> {
    let target = listwise_target(labels)?;
    let t = g.constant(column(&target));
    let p = g.softmax_rows(scores);
    let lp = g.safe_log(p, SOFTMAX_FLOOR);
    let ce = g.matmul(lp, t);
    Some(g.scale(ce, -1.0))
}
