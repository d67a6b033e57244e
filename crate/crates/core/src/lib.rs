//! Neural text matching.
//!
//! Text processing units and pipelines, a small reverse-mode autodiff core,
//! matching layers (matching matrix, matching histogram, attention, kernel
//! pooling), the DSSM, DRMM and KNRM models, ranking losses and metrics, a
//! training loop, seeded random-search tuning and on-disk run artifacts.

pub mod autodiff;
pub mod automl;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod models;
pub mod seed;
pub mod store;
pub mod text;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
