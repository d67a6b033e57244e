use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{glorot, ParamInfo, ParamStore};
use super::spec::{get_usize, HyperParams};
use super::{affine, PairNodes};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::text::Sequence;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dssm {
    pub input_dim: usize,
    pub widths: Vec<usize>,
}

impl Dssm {
    pub fn from_hp(hp: &HyperParams, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("DSSM needs a fitted trigram vocabulary"));
        }
        let hidden = get_usize(hp, "hidden_size")?;
        let mut widths = vec![hidden; get_usize(hp, "hidden_layers")?];
        widths.push(get_usize(hp, "output_size")?);
        Ok(Dssm { input_dim, widths })
    }

    pub fn layout(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        let mut fan_in = self.input_dim;
        for (i, &w) in self.widths.iter().enumerate() {
            out.push(ParamInfo {
                name: format!("tower.{i}.weight"),
                shape: vec![fan_in, w],
                trainable: true,
            });
            out.push(ParamInfo {
                name: format!("tower.{i}.bias"),
                shape: vec![1, w],
                trainable: true,
            });
            fan_in = w;
        }
        out
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for info in self.layout() {
            let value = if info.name.ends_with("weight") {
                glorot(&mut rng, info.shape[0], info.shape[1])
            } else {
                Tensor::zeros(info.shape.clone())
            };
            store.insert(info.name, value, true)?;
        }
        Ok(store)
    }

    fn counts<'s>(&self, s: &'s Sequence) -> Result<&'s [f64]> {
        match s.as_counts() {
            Some(c) if c.len() == self.input_dim => Ok(c),
            Some(c) => Err(Error::data(format!(
                "trigram vector has length {}, model expects {}",
                c.len(),
                self.input_dim
            ))),
            None => Err(Error::data(
                "DSSM expects trigram-count input (text not processed by the model pipeline)",
            )),
        }
    }

    /// Shared tower from a [1, V] count vector to the final representation.
    pub fn tower(&self, g: &mut Graph, input: &Sequence) -> Result<NodeId> {
        let counts = self.counts(input)?.to_vec();
        let mut x = g.constant(Tensor::row(counts));
        for i in 0..self.widths.len() {
            let z = affine(g, x, &format!("tower.{i}"), 1);
            x = g.tanh(z);
        }
        Ok(x)
    }

    pub fn pair(&self, g: &mut Graph, left: &Sequence, right: &Sequence) -> Result<PairNodes> {
        let l = self.tower(g, left)?;
        let r = self.tower(g, right)?;
        let ln = g.l2_normalize_rows(l);
        let rn = g.l2_normalize_rows(r);
        let prod = g.mul(ln, rn);
        let score = g.sum_all(prod);
        Ok(PairNodes::Representation { score, left: l, right: r })
    }
}
