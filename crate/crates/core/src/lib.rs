//! Federated fine-tuning simulator.
//!
//! Compares LoRA-based aggregation schemes (FedIT, FlexLoRA, FFA-LoRA) with
//! direct weight averaging driven by a GaLore low-rank-gradient optimizer
//! (FedFTG), on two small differentiable model families. Everything is
//! seeded and in-process; the CLI in `src/bin` wraps [`harness`].

pub mod error;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod adapters;
pub mod data;
pub mod metrics;
pub mod federation;
pub mod harness;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/linear-algebra.md")]
    pub struct LinearAlgebra;
    #[doc = include_str!("../../../book/src/models.md")]
    pub struct Models;
    #[doc = include_str!("../../../book/src/optimizers.md")]
    pub struct Optimizers;
    #[doc = include_str!("../../../book/src/adapters.md")]
    pub struct Adapters;
    #[doc = include_str!("../../../book/src/aggregation.md")]
    pub struct Aggregation;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub struct Metrics;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
