use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{histogram_bin, matching_matrix, MatchMode};
use super::params::{glorot, uniform, ParamInfo, ParamStore};
use super::spec::{get_usize, HyperParams};
use super::{affine, unpadded, PairNodes};
use crate::autodiff::{Graph, Tensor};
use crate::dataset::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::text::Sequence;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Drmm {
    pub rows: usize,
    pub dim: usize,
    pub bins: usize,
    pub hidden: usize,
}

impl Drmm {
    pub fn from_hp(hp: &HyperParams, rows: usize, dim: usize) -> Result<Self> {
        let want = get_usize(hp, "embedding_dim")?;
        if want != dim {
            return Err(Error::config(format!(
                "embedding_dim is {want} but the embedding matrix has dimension {dim}"
            )));
        }
        Ok(Drmm {
            rows,
            dim,
            bins: get_usize(hp, "bin_count")?,
            hidden: get_usize(hp, "hidden_size")?,
        })
    }

    pub fn layout(&self) -> Vec<ParamInfo> {
        let p = |name: &str, shape: Vec<usize>, trainable| ParamInfo {
            name: name.to_string(),
            shape,
            trainable,
        };
        vec![
            p("embedding", vec![self.rows, self.dim], false),
            p("idf", vec![self.rows, 1], false),
            p("ffn.0.weight", vec![self.bins, self.hidden], true),
            p("ffn.0.bias", vec![1, self.hidden], true),
            p("ffn.1.weight", vec![self.hidden, 1], true),
            p("ffn.1.bias", vec![1, 1], true),
            p("gate.weight", vec![1, 1], true),
        ]
    }

    pub fn init(&self, embeddings: &EmbeddingMatrix, idf: &[f64], seed: u64) -> Result<ParamStore> {
        if embeddings.rows() != self.rows || idf.len() != self.rows {
            return Err(Error::config(format!(
                "DRMM needs {} embedding rows and idf weights, got {} and {}",
                self.rows,
                embeddings.rows(),
                idf.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.insert("embedding", embeddings.tensor().clone(), false)?;
        store.insert("idf", Tensor::new(vec![self.rows, 1], idf.to_vec())?, false)?;
        store.insert("ffn.0.weight", glorot(&mut rng, self.bins, self.hidden), true)?;
        store.insert("ffn.0.bias", Tensor::zeros(vec![1, self.hidden]), true)?;
        store.insert("ffn.1.weight", glorot(&mut rng, self.hidden, 1), true)?;
        store.insert("ffn.1.bias", Tensor::zeros(vec![1, 1]), true)?;
        store.insert("gate.weight", uniform(&mut rng, vec![1, 1], 0.1), true)?;
        Ok(store)
    }

    /// Cosine similarities between the unpadded terms of both sides.
    pub fn matrix(&self, params: &ParamStore, left: &[usize], right: &[usize]) -> Result<Vec<Vec<f64>>> {
        cosine_rows(params.require("embedding")?, left, right)
    }

    pub fn pair(&self, g: &mut Graph, params: &ParamStore, left: &Sequence, right: &Sequence) -> Result<PairNodes> {
        let li = unpadded(left, self.rows)?;
        let ri = unpadded(right, self.rows)?;
        let matrix = self.matrix(params, &li, &ri)?;
        let n = li.len();
        if n == 0 {
            let score = g.constant(Tensor::scalar(0.0));
            return Ok(PairNodes::Interaction {
                score,
                matrix,
                features: None,
                gates: None,
            });
        }
        let mut hist = Vec::with_capacity(n * self.bins);
        for row in &matrix {
            let mut h = vec![0.0; self.bins];
            for &v in row {
                h[histogram_bin(v, self.bins)] += 1.0;
            }
            hist.extend(h.into_iter().map(f64::ln_1p));
        }
        let h = g.constant(Tensor::new(vec![n, self.bins], hist)?);
        let z1 = affine(g, h, "ffn.0", n);
        let a1 = g.tanh(z1);
        let z2 = affine(g, a1, "ffn.1", n);
        let z = g.tanh(z2);
        let idf_table = params.require("idf")?;
        let idf_row = g.constant(Tensor::row(li.iter().map(|&t| idf_table.data()[t]).collect()));
        let wg = g.parameter("gate.weight", true);
        let logits = g.matmul(wg, idf_row);
        let gates = g.softmax_rows(logits);
        let score = g.matmul(gates, z);
        Ok(PairNodes::Interaction {
            score,
            matrix,
            features: Some(z),
            gates: Some(gates),
        })
    }
}

pub(crate) fn cosine_rows(table: &Tensor, left: &[usize], right: &[usize]) -> Result<Vec<Vec<f64>>> {
    if left.is_empty() || right.is_empty() {
        return Ok(vec![Vec::new(); left.len()]);
    }
    let gather = |ids: &[usize]| {
        Tensor::from_rows(&ids.iter().map(|&i| table.row_slice(i).to_vec()).collect::<Vec<_>>())
    };
    Ok(matching_matrix(&gather(left), &gather(right), MatchMode::Cosine, None)?.to_rows())
}
