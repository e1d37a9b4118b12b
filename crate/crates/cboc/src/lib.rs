//! Collaborative Bayesian optimization via consensus.
//!
//! Multiple simulated clients each run GP-surrogate Bayesian optimization
//! and coordinate their next-to-sample designs through a time-varying
//! doubly-stochastic consensus matrix. The crate provides the surrogate
//! (`gp`), the utility functions and their maximizer (`acquisition`), the
//! consensus matrix machinery (`consensus`), the round loop (`clients`),
//! benchmark problems and metrics (`benchmarks`), and the experiment
//! runner behind the `cboc` binary (`config`, `experiment`).

pub mod acquisition;
pub mod benchmarks;
pub mod clients;
pub mod config;
pub mod consensus;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod objective;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
