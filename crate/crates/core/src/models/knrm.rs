use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::drmm::cosine_rows;
use super::layers::{cosine_matrix_node, kernel_pooling_node, KernelBank, KERNEL_LOG_FLOOR};
use super::params::{uniform, ParamInfo, ParamStore};
use super::spec::{get_f64, get_usize, HyperParams};
use super::{affine, unpadded, PairNodes};
use crate::autodiff::{Graph, Tensor};
use crate::dataset::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::text::Sequence;

const DENSE_INIT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Knrm {
    pub rows: usize,
    pub dim: usize,
    pub bank: KernelBank,
}

impl Knrm {
    pub fn from_hp(hp: &HyperParams, rows: usize, dim: usize) -> Result<Self> {
        let want = get_usize(hp, "embedding_dim")?;
        if want != dim {
            return Err(Error::config(format!(
                "embedding_dim is {want} but the embedding matrix has dimension {dim}"
            )));
        }
        let bank = KernelBank::grid(
            get_usize(hp, "kernel_count")?,
            get_f64(hp, "sigma")?,
            get_f64(hp, "exact_sigma")?,
        )?;
        Ok(Knrm { rows, dim, bank })
    }

    pub fn layout(&self) -> Vec<ParamInfo> {
        vec![
            ParamInfo {
                name: "embedding".into(),
                shape: vec![self.rows, self.dim],
                trainable: true,
            },
            ParamInfo {
                name: "dense.weight".into(),
                shape: vec![self.bank.len(), 1],
                trainable: true,
            },
            ParamInfo {
                name: "dense.bias".into(),
                shape: vec![1, 1],
                trainable: true,
            },
        ]
    }

    pub fn init(&self, embeddings: &EmbeddingMatrix, seed: u64) -> Result<ParamStore> {
        if embeddings.rows() != self.rows {
            return Err(Error::config(format!(
                "KNRM needs {} embedding rows, got {}",
                self.rows,
                embeddings.rows()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.insert("embedding", embeddings.tensor().clone(), true)?;
        store.insert("dense.weight", uniform(&mut rng, vec![self.bank.len(), 1], DENSE_INIT), true)?;
        store.insert("dense.bias", Tensor::zeros(vec![1, 1]), true)?;
        Ok(store)
    }

    pub fn pair(&self, g: &mut Graph, params: &ParamStore, left: &Sequence, right: &Sequence) -> Result<PairNodes> {
        let li = unpadded(left, self.rows)?;
        let ri = unpadded(right, self.rows)?;
        let matrix = cosine_rows(params.require("embedding")?, &li, &ri)?;
        let k = self.bank.len();
        let (n, m) = (li.len(), ri.len());
        let phi = if n == 0 {
            g.constant(Tensor::zeros(vec![1, k]))
        } else if m == 0 {
            g.constant(Tensor::filled(vec![1, k], n as f64 * KERNEL_LOG_FLOOR.ln()))
        } else {
            let e = g.parameter("embedding", true);
            let l = g.gather_rows(e, li);
            let r = g.gather_rows(e, ri);
            let mat = cosine_matrix_node(g, l, r);
            kernel_pooling_node(g, mat, (n, m), &self.bank)
        };
        let z = affine(g, phi, "dense", 1);
        let score = g.tanh(z);
        Ok(PairNodes::Interaction {
            score,
            matrix,
            features: Some(phi),
            gates: None,
        })
    }
}
