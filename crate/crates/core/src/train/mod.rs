//! Losses, optimizers, ranking metrics and the training loop.

pub mod loss;
pub mod metrics;
pub mod optim;
mod trainer;

pub use loss::{
    hinge_node, listwise_node, listwise_softmax_ce, pairwise_hinge, pointwise_loss,
    pointwise_loss_node, PointwiseKind,
};
pub use metrics::{
    average_precision, evaluate, mean_average_precision, mrr, ndcg_at_k, precision_at_k, rank,
    rank_scores, ranked_labels, reciprocal_rank, Metric, RankedItem, METRIC_NAMES,
};
pub use optim::{Optimizer, OptimizerKind};
pub use trainer::{mean_loss, train, BatchMode, EpochEvent, LossConfig, TrainConfig};
