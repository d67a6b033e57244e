use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bindings, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Name, shape and trainability of one parameter, without its values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// Named parameters in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::config(format!("parameter `{name}` registered twice")));
        }
        self.params.push(Parameter {
            name,
            value,
            trainable,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    pub(crate) fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values, trainable or not.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_scalar_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn layout(&self) -> Vec<ParamInfo> {
        self.params
            .iter()
            .map(|p| ParamInfo {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
            })
            .collect()
    }
}

impl Bindings for ParamStore {
    fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

/// Glorot-uniform matrix of shape [fan_in, fan_out].
pub(crate) fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, vec![fan_in, fan_out], limit)
}

pub(crate) fn uniform<R: Rng>(rng: &mut R, shape: Vec<usize>, limit: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("shape matches data length")
}
