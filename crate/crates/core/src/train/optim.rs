use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::ParamStore;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Tensor,
    v: Tensor,
}

/// Optimizer with its per-parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    steps: i32,
    moments: BTreeMap<String, Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(Optimizer {
            kind,
            lr,
            steps: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite
    /// or mis-shaped.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::config(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    node: 0,
                    op: "optimizer_step",
                    expected: format!("{:?} for `{name}`", p.shape()),
                    actual: format!("{:?}", g.shape()),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        self.steps += 1;
        let lr = self.lr;
        let t = self.steps;
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
                OptimizerKind::Adam => {
                    let st = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                        m: Tensor::zeros_like(g),
                        v: Tensor::zeros_like(g),
                    });
                    let c1 = 1.0 - ADAM_BETA1.powi(t);
                    let c2 = 1.0 - ADAM_BETA2.powi(t);
                    let (m, v) = (st.m.data_mut(), st.v.data_mut());
                    for (i, w) in p.data_mut().iter_mut().enumerate() {
                        let d = g.data()[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * d;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * d * d;
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        *w -= lr * mh / (vh.sqrt() + ADAM_EPSILON);
                    }
                }
            }
        }
        Ok(())
    }
}
