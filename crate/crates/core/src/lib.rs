//! Country-level excess mortality estimation.
//!
//! The crate is organized along the estimation pipeline:
//!
//! * [`data`]: input tables, ingestion, covariate standardization.
//! * [`expected`]: negative binomial penalized-spline baselines.
//! * [`seasonal`]: temperature-driven month shares for annual-only countries.
//! * [`gamma`]: gamma approximations to expected-number uncertainty.
//! * [`covariate`]: the hierarchical log-linear count model and its
//!   predictions for countries without (complete) national data.
//! * [`subnational`]: national totals from region-level data.
//! * [`excess`]: excess draws, aggregation, rates, rankings.
//! * [`validation`]: cross-validation, residuals, simulation studies.
//! * [`pipeline`]: staged, cached end-to-end runs and the run directory.
//! * [`config`], [`draws_io`]: run configuration and the draws container.

pub mod config;
pub mod covariate;
pub mod data;
pub mod digest;
pub mod draws_io;
pub mod error;
pub mod excess;
pub mod expected;
pub mod gamma;
pub mod mcmc;
pub mod pipeline;
pub mod rng;
pub mod seasonal;
pub mod stats;
pub mod subnational;
pub mod synth;
pub mod validation;

pub use error::{Error, Result};
