//! Exact variance analysis and training of communicating multi-agent policy
//! gradients on tabular Dec-POMDPs.
//!
//! The crate has three layers:
//!
//! - models and environments ([`model`]), softmax policies ([`policy`]),
//!   message channels and reward noise ([`channel`]), tabular critics
//!   ([`critic`]) and single-sample gradient estimators ([`estimator`]);
//! - an exhaustive oracle ([`oracle`]) computing on-policy Q-functions and
//!   exact gradient moments by enumerating every outcome of a model;
//! - a training loop ([`trainer`]) plus experiment orchestration and
//!   reporting ([`experiment`], [`metrics`]).

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod critic;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod par;
pub mod policy;
pub mod trainer;

pub use error::{Error, Result};
