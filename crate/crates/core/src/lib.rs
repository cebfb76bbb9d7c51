//! Optimal execution with a latent, regime-switching alpha: filtering,
//! closed-form controls, Monte Carlo evaluation and EM calibration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod control;
pub mod error;
pub mod filtering;
pub mod latent_chain;
pub mod model;
pub mod simulator;

pub use error::{Error, Result};
pub use latent_chain::{ChainPath, LatentChainSpec};
pub use model::ModelSpec;
