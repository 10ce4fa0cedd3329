//! Detecting and quantifying confounding in trained classifiers by
//! permutation: a restricted null that shuffles labels only within confounder
//! levels is compared with an unconfounded reference null.

pub mod adjust;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod inference;
pub mod learners;
pub mod metrics;
pub mod par;
pub mod perm;
pub mod rng;
pub mod sim;
pub mod stattest;

pub use error::{Error, Result};
pub use par::Execution;
