use std::collections::BTreeMap;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::loss::{check_margin, hinge_node, listwise_node, pointwise_loss_node, PointwiseKind};
use super::metrics::{evaluate, Metric};
use super::optim::{Optimizer, OptimizerKind};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::dataset::{listwise_batches, pairwise_batches, pointwise_batches, Batch, DataPack, ListOrder};
use crate::error::{Error, Result};
use crate::models::{HpValue, ModelInstance};
use crate::seed::{derive_seed, streams};
use crate::text::Sequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossConfig {
    Mse,
    Bce,
    Hinge {
        #[serde(default = "default_margin")]
        margin: f64,
    },
    ListwiseCe,
}

fn default_margin() -> f64 {
    1.0
}

impl LossConfig {
    pub fn batch_mode(&self) -> BatchMode {
        match self {
            LossConfig::Mse | LossConfig::Bce => BatchMode::Pointwise,
            LossConfig::Hinge { .. } => BatchMode::Pairwise,
            LossConfig::ListwiseCe => BatchMode::Listwise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Pointwise,
    Pairwise,
    Listwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossConfig,
    /// Must agree with the loss when given.
    pub batch_mode: Option<BatchMode>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Negatives sampled per positive in pairwise mode.
    pub num_neg: usize,
    pub seed: u64,
    pub metrics: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::Hinge { margin: 1.0 },
            batch_mode: None,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 32,
            num_neg: 1,
            seed: 0,
            metrics: vec!["ndcg@10".into(), "map".into()],
        }
    }
}

impl TrainConfig {
    /// Checks the config and returns its parsed validation metrics.
    pub fn validate(&self) -> Result<Vec<Metric>> {
        if self.epochs < 1 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.num_neg < 1 {
            return Err(Error::config("num_neg must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if let LossConfig::Hinge { margin } = self.loss {
            check_margin(margin)?;
        }
        if let Some(mode) = self.batch_mode {
            if mode != self.loss.batch_mode() {
                return Err(Error::config(format!(
                    "{:?} loss needs {:?} batches, not {mode:?}",
                    self.loss,
                    self.loss.batch_mode()
                )));
            }
        }
        Metric::parse_list(&self.metrics)
    }

    /// Takes `learning_rate` and `optimizer` from resolved model
    /// hyper-parameters when present.
    pub fn with_model_overrides(mut self, model: &ModelInstance) -> Self {
        let hp = model.hyper_parameters();
        if let Some(lr) = hp.get("learning_rate").and_then(HpValue::as_f64) {
            self.learning_rate = lr;
        }
        match hp.get("optimizer").and_then(HpValue::as_str) {
            Some("sgd") => self.optimizer = OptimizerKind::Sgd,
            Some("adam") => self.optimizer = OptimizerKind::Adam,
            _ => {}
        }
        self
    }
}

/// Progress record for one finished epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEvent {
    pub epoch: usize,
    pub loss: f64,
    pub metrics: BTreeMap<String, f64>,
    pub seconds: f64,
}

/// Wall-clock timer; reads zero where the platform has no clock.
struct Stopwatch {
    #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
    started: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Stopwatch {
            #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
            started: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
        return self.started.elapsed().as_secs_f64();
        #[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
        0.0
    }
}

fn scores_column(g: &mut Graph, model: &ModelInstance, pairs: &[(&Sequence, &Sequence)], axis: usize) -> Result<NodeId> {
    let nodes = pairs
        .iter()
        .map(|(l, r)| model.score_node(g, l, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(g.concat_axis(&nodes, axis))
}

/// Loss node of one batch and its weight in the epoch mean, or `None` when
/// the batch contributes nothing (degenerate listwise group).
fn batch_loss(
    g: &mut Graph,
    model: &ModelInstance,
    pack: &DataPack<Sequence>,
    batch: &Batch,
    loss: LossConfig,
) -> Result<Option<(NodeId, f64)>> {
    Ok(match (batch, loss) {
        (Batch::Pointwise(rels), LossConfig::Mse | LossConfig::Bce) => {
            let pairs: Vec<_> = rels
                .iter()
                .map(|r| (pack.left_text(&r.left), pack.right_text(&r.right)))
                .collect();
            let s = scores_column(g, model, &pairs, 0)?;
            let labels: Vec<f64> = rels.iter().map(|r| r.label as f64).collect();
            let kind = if loss == LossConfig::Mse {
                PointwiseKind::Mse
            } else {
                PointwiseKind::Bce
            };
            Some((pointwise_loss_node(g, s, &labels, kind)?, rels.len() as f64))
        }
        (Batch::Pairwise(pairs), LossConfig::Hinge { margin }) => {
            let pos: Vec<_> = pairs
                .iter()
                .map(|p| (pack.left_text(&p.left), pack.right_text(&p.pos)))
                .collect();
            let neg: Vec<_> = pairs
                .iter()
                .map(|p| (pack.left_text(&p.left), pack.right_text(&p.neg)))
                .collect();
            let sp = scores_column(g, model, &pos, 0)?;
            let sn = scores_column(g, model, &neg, 0)?;
            Some((hinge_node(g, sp, sn, pairs.len(), margin)?, pairs.len() as f64))
        }
        (Batch::Listwise(group), LossConfig::ListwiseCe) => {
            let labels: Vec<f64> = group.labels.iter().map(|&l| l as f64).collect();
            if super::loss::listwise_target(&labels).is_none() {
                return Ok(None);
            }
            let left = pack.left_text(&group.left);
            let pairs: Vec<_> = group.rights.iter().map(|r| (left, pack.right_text(r))).collect();
            let s = scores_column(g, model, &pairs, 1)?;
            listwise_node(g, s, &labels).map(|n| (n, 1.0))
        }
        _ => return Err(Error::config("batch mode does not match the loss")),
    })
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    derive_seed(derive_seed(seed, streams::TRAINING), epoch as u64)
}

fn epoch_batches(pack: &DataPack<Sequence>, config: &TrainConfig, seed: u64) -> Result<Vec<Batch>> {
    Ok(match config.loss.batch_mode() {
        BatchMode::Pointwise => pointwise_batches(pack, config.batch_size, seed)?,
        BatchMode::Pairwise => pairwise_batches(pack, config.num_neg, config.batch_size, seed)?,
        BatchMode::Listwise => listwise_batches(pack, ListOrder::Shuffled(seed)),
    })
}

/// Mean loss of `model` over one pass of `pack` without updating it.
pub fn mean_loss(model: &ModelInstance, pack: &DataPack<Sequence>, config: &TrainConfig) -> Result<f64> {
    config.validate()?;
    let batches = epoch_batches(pack, config, epoch_seed(config.seed, 0))?;
    let (mut total, mut weight) = (0.0, 0.0);
    for batch in &batches {
        let mut g = Graph::new();
        if let Some((loss, w)) = batch_loss(&mut g, model, pack, batch, config.loss)? {
            total += g.evaluate(model.params())?.value(loss).data()[0] * w;
            weight += w;
        }
    }
    if weight == 0.0 {
        return Err(Error::data("no batch contributes to the loss"));
    }
    Ok(total / weight)
}

/// Trains `model` in place for `config.epochs` epochs, reporting each epoch
/// to `sink` as it completes. A `Break` from the sink stops training with
/// [`Error::Cancelled`]. On failure the events already sent remain the
/// partial history.
pub fn train(
    model: &mut ModelInstance,
    train_pack: &DataPack<Sequence>,
    valid_pack: Option<&DataPack<Sequence>>,
    config: &TrainConfig,
    sink: &mut dyn FnMut(&EpochEvent) -> ControlFlow<()>,
) -> Result<Vec<EpochEvent>> {
    let metrics = config.validate()?;
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate)?;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let started = Stopwatch::start();
        let batches = epoch_batches(train_pack, config, epoch_seed(config.seed, epoch))?;
        let (mut total, mut weight) = (0.0, 0.0);
        for batch in &batches {
            let mut g = Graph::new();
            let Some((loss, w)) = batch_loss(&mut g, model, train_pack, batch, config.loss)? else {
                continue;
            };
            let grads: BTreeMap<String, Tensor> = {
                let eval = g.evaluate(model.params())?;
                let value = eval.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                total += value * w;
                weight += w;
                g.backward(&eval, loss)?.parameters()
            };
            optimizer.step(model.params_mut(), &grads)?;
        }
        if weight == 0.0 {
            return Err(Error::data("every training group is degenerate (no positive labels)"));
        }
        let values = match valid_pack {
            Some(v) if !metrics.is_empty() => evaluate(model, v, &metrics)?,
            _ => BTreeMap::new(),
        };
        let event = EpochEvent {
            epoch,
            loss: total / weight,
            metrics: values,
            seconds: started.seconds(),
        };
        let flow = sink(&event);
        history.push(event);
        if flow.is_break() {
            return Err(Error::Cancelled);
        }
    }
    Ok(history)
}
