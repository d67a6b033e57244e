//! Matching layers and the DSSM, DRMM and KNRM models.

mod drmm;
mod dssm;
mod knrm;
pub mod layers;
pub mod params;
pub mod spec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::dataset::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::text::{Sequence, PAD_INDEX};

pub use layers::{
    attention, attention_node, cosine_matrix_node, histogram_bin, kernel_pooling,
    kernel_pooling_node, matching_histogram, matching_matrix, HistogramMode, Kernel, KernelBank,
    MatchMode, EXACT_MATCH_TOLERANCE, KERNEL_LOG_FLOOR,
};
pub use params::{ParamInfo, ParamStore, Parameter};
pub use spec::{
    model_spec, registry, Family, HpValue, HyperParamSpec, HyperParams, ModelSpec, ParamDomain,
};

use drmm::Drmm;
use dssm::Dssm;
use knrm::Knrm;

/// `x·W + b` for parameters `{prefix}.weight` / `{prefix}.bias`, with the
/// [1, k] bias repeated over `rows` rows.
pub(crate) fn affine(g: &mut Graph, x: NodeId, prefix: &str, rows: usize) -> NodeId {
    let w = g.parameter(&format!("{prefix}.weight"), true);
    let b = g.parameter(&format!("{prefix}.bias"), true);
    let xw = g.matmul(x, w);
    let bias = if rows == 1 {
        b
    } else {
        let ones = g.constant(Tensor::filled(vec![rows, 1], 1.0));
        g.matmul(ones, b)
    };
    g.add(xw, bias)
}

/// Index sequence with padding removed; indices must address `rows` rows.
pub(crate) fn unpadded(s: &Sequence, rows: usize) -> Result<Vec<usize>> {
    let ids = s.as_indices().ok_or_else(|| {
        Error::data("model expects index input (text not processed by the model pipeline)")
    })?;
    if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
        return Err(Error::data(format!("token index {bad} outside vocabulary of {rows}")));
    }
    Ok(ids.iter().copied().filter(|&i| i != PAD_INDEX).collect())
}

/// Graph nodes for one scored pair.
pub(crate) enum PairNodes {
    Representation {
        score: NodeId,
        left: NodeId,
        right: NodeId,
    },
    Interaction {
        score: NodeId,
        matrix: Vec<Vec<f64>>,
        features: Option<NodeId>,
        gates: Option<NodeId>,
    },
}

impl PairNodes {
    fn score(&self) -> NodeId {
        match self {
            PairNodes::Representation { score, .. } | PairNodes::Interaction { score, .. } => *score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// Final linear weights, one per kernel.
    KernelWeights,
    /// Softmax term gates, one per left-side term.
    TermGates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Explanation {
    Representation {
        left: Vec<f64>,
        right: Vec<f64>,
        score: f64,
    },
    Interaction {
        /// Cosine similarities, |left| × |right| over unpadded tokens.
        matrix: Vec<Vec<f64>>,
        weights: Vec<f64>,
        weight_kind: WeightKind,
        /// Kernel features (KNRM) or per-term scores (DRMM).
        features: Vec<f64>,
        score: f64,
    },
}

impl Explanation {
    pub fn score(&self) -> f64 {
        match self {
            Explanation::Representation { score, .. } | Explanation::Interaction { score, .. } => *score,
        }
    }
}

/// Inputs a model needs beyond its hyper-parameters.
#[derive(Debug, Clone, Default)]
pub struct BuildContext {
    /// Length of the trigram-count vectors (DSSM).
    pub trigram_dim: Option<usize>,
    /// Word embeddings indexed by vocabulary id (DRMM, KNRM).
    pub embeddings: Option<EmbeddingMatrix>,
    /// IDF weight per vocabulary id (DRMM).
    pub idf: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
enum Arch {
    Dssm(Dssm),
    Drmm(Drmm),
    Knrm(Knrm),
}

impl Arch {
    fn layout(&self) -> Vec<ParamInfo> {
        match self {
            Arch::Dssm(a) => a.layout(),
            Arch::Drmm(a) => a.layout(),
            Arch::Knrm(a) => a.layout(),
        }
    }
}

/// A parameterized matching network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInstance {
    spec: ModelSpec,
    hp: HyperParams,
    params: ParamStore,
    arch: Arch,
}

fn embeddings_of(ctx: &BuildContext, id: &str) -> Result<EmbeddingMatrix> {
    ctx.embeddings
        .clone()
        .ok_or_else(|| Error::config(format!("{id} needs an embedding matrix")))
}

fn table_dims(params: &ParamStore, name: &str) -> Result<(usize, usize)> {
    params
        .require(name)?
        .dims2()
        .ok_or_else(|| Error::config(format!("parameter `{name}` is not a matrix")))
}

impl ModelInstance {
    /// Builds and seeds a fresh model. `hp` may be partial; schema defaults fill the rest.
    pub fn build(id: &str, hp: &HyperParams, ctx: &BuildContext, seed: u64) -> Result<Self> {
        let spec = model_spec(id)?;
        let hp = spec.resolve(hp)?;
        let (arch, params) = match spec.id {
            spec::DSSM => {
                let dim = ctx
                    .trigram_dim
                    .ok_or_else(|| Error::config("dssm needs a fitted trigram vocabulary"))?;
                let a = Dssm::from_hp(&hp, dim)?;
                let p = a.init(seed)?;
                (Arch::Dssm(a), p)
            }
            spec::DRMM => {
                let emb = embeddings_of(ctx, id)?;
                let idf = ctx
                    .idf
                    .as_ref()
                    .ok_or_else(|| Error::config("drmm needs idf weights"))?;
                let a = Drmm::from_hp(&hp, emb.rows(), emb.dim())?;
                let p = a.init(&emb, idf, seed)?;
                (Arch::Drmm(a), p)
            }
            _ => {
                let emb = embeddings_of(ctx, id)?;
                let a = Knrm::from_hp(&hp, emb.rows(), emb.dim())?;
                let p = a.init(&emb, seed)?;
                (Arch::Knrm(a), p)
            }
        };
        Ok(ModelInstance {
            spec,
            hp,
            params,
            arch,
        })
    }

    /// Reassembles a model from stored parts, checking every parameter's
    /// name, shape and trainability against what `hp` implies.
    pub fn from_parts(id: &str, hp: &HyperParams, params: ParamStore) -> Result<Self> {
        let spec = model_spec(id)?;
        let hp = spec.resolve(hp)?;
        let arch = match spec.id {
            spec::DSSM => Arch::Dssm(Dssm::from_hp(&hp, table_dims(&params, "tower.0.weight")?.0)?),
            spec::DRMM => {
                let (r, d) = table_dims(&params, "embedding")?;
                Arch::Drmm(Drmm::from_hp(&hp, r, d)?)
            }
            _ => {
                let (r, d) = table_dims(&params, "embedding")?;
                Arch::Knrm(Knrm::from_hp(&hp, r, d)?)
            }
        };
        if arch.layout() != params.layout() {
            return Err(Error::config(format!(
                "stored parameters do not match a {id} model with these hyper-parameters"
            )));
        }
        Ok(ModelInstance {
            spec,
            hp,
            params,
            arch,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn id(&self) -> &'static str {
        self.spec.id
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn hyper_parameters(&self) -> &HyperParams {
        &self.hp
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn pair_nodes(&self, g: &mut Graph, left: &Sequence, right: &Sequence) -> Result<PairNodes> {
        match &self.arch {
            Arch::Dssm(a) => a.pair(g, left, right),
            Arch::Drmm(a) => a.pair(g, &self.params, left, right),
            Arch::Knrm(a) => a.pair(g, &self.params, left, right),
        }
    }

    /// Adds the [1, 1] score node of one pair to `g`. Parameters appear as
    /// graph inputs named as in [`ModelInstance::params`].
    pub fn score_node(&self, g: &mut Graph, left: &Sequence, right: &Sequence) -> Result<NodeId> {
        Ok(self.pair_nodes(g, left, right)?.score())
    }

    pub fn score(&self, left: &Sequence, right: &Sequence) -> Result<f64> {
        let mut g = Graph::new();
        let s = self.score_node(&mut g, left, right)?;
        let eval = g.evaluate(&self.params)?;
        Ok(eval.value(s).data()[0])
    }

    /// Scores of many pairs as a [batch, 1] tensor.
    pub fn score_batch(&self, pairs: &[(&Sequence, &Sequence)]) -> Result<Tensor> {
        if pairs.is_empty() {
            return Err(Error::data("empty batch"));
        }
        let mut g = Graph::new();
        let nodes = pairs
            .iter()
            .map(|(l, r)| self.score_node(&mut g, l, r))
            .collect::<Result<Vec<_>>>()?;
        let out = g.concat_axis(&nodes, 0);
        let eval = g.evaluate(&self.params)?;
        Ok(eval.value(out).clone())
    }

    pub fn explain(&self, left: &Sequence, right: &Sequence) -> Result<Explanation> {
        let mut g = Graph::new();
        let nodes = self.pair_nodes(&mut g, left, right)?;
        let eval = g.evaluate(&self.params)?;
        let values = |n: Option<NodeId>| n.map(|n| eval.value(n).data().to_vec()).unwrap_or_default();
        Ok(match nodes {
            PairNodes::Representation { score, left, right } => Explanation::Representation {
                left: values(Some(left)),
                right: values(Some(right)),
                score: eval.value(score).data()[0],
            },
            PairNodes::Interaction {
                score,
                matrix,
                features,
                gates,
            } => {
                let (weights, weight_kind) = match &self.arch {
                    Arch::Drmm(_) => (values(gates), WeightKind::TermGates),
                    _ => (
                        self.params.require("dense.weight")?.data().to_vec(),
                        WeightKind::KernelWeights,
                    ),
                };
                Explanation::Interaction {
                    matrix,
                    weights,
                    weight_kind,
                    features: values(features),
                    score: eval.value(score).data()[0],
                }
            }
        })
    }
}
