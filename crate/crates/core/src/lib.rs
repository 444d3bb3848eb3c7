//! Gradient-accumulated alternating training (GRAM) of a content encoder and
//! a collaborative filter, next to an end-to-end baseline, on a small
//! reverse-mode autodiff engine.

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod error;
pub mod instrument;
pub mod metrics;
pub mod model;
pub mod report;
pub mod scalar;
pub mod seed;
pub mod training;

pub use autodiff::{Graph, Tensor, Var};
pub use config::{DataConfig, Precision, RunConfig};
pub use dataset::{Batch, Dataset, Item, ItemId, UserId, UserSequence};
pub use error::{Error, Result};
pub use instrument::{CostCounters, SpeedReport};
pub use model::{CeParams, CfParams, CfVariant, ModelConfig};
pub use report::RunReport;
pub use scalar::Scalar;
pub use training::{train, Mode, TrainerState};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;
pub type CeParams64 = CeParams<f64>;
pub type CfParams64 = CfParams<f64>;
pub type CeParams32 = CeParams<f32>;
pub type CfParams32 = CfParams<f32>;
pub type Trainer64 = TrainerState<f64>;
pub type Trainer32 = TrainerState<f32>;
/// Exact interaction/item ratio.
pub type ExactRatio = num_rational::Ratio<u64>;
