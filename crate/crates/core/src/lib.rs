//! Learning neural approximations of solution maps for multiparametric
//! generalized Nash equilibrium problems.
//!
//! A game is learned in two stages. First, one value-function surrogate per
//! agent is regressed on best-response values collected at feasible sample
//! points ([`learn::train_value_models`]). Second, a solution network
//! `p -> x` is trained by minimizing an approximate Nikaido-Isoda gap built
//! from those surrogates, plus a log-sum-exp constraint penalty
//! ([`learn::train_gne`]). Single-agent multiparametric programs skip the
//! first stage entirely ([`learn::train_single_agent`]).
//!
//! Module map:
//!
//! - [`autodiff`], [`nn`]: tensor tape with reverse-mode gradients and the MLP built on it.
//! - [`optimize`]: Adam, L-BFGS, projected quasi-Newton on boxes, dense QP, SQP, projection.
//! - [`games`]: parametric games, the benchmark families and their file format.
//! - [`bestresponse`]: agent best responses and value functions.
//! - [`dataset`]: Latin hypercube sampling, feasible sampling, dataset CSV files.
//! - [`learn`]: value models, NI terms and losses, constraint penalty, training, prediction.
//! - [`evaluate`]: best-response error, violation statistics, relative error, reports.

pub mod autodiff;
pub mod bestresponse;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod games;
pub mod learn;
pub mod linalg;
pub mod nn;
pub mod optimize;
pub mod textfmt;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
