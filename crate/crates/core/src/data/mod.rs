//! Canonical data types and input ingestion.

mod covariates;
mod io;
mod types;

pub use covariates::{ingest_covariates, standardize_covariates, Covariate, CovariatePanel, Scaling};
pub use io::{
    format_number, ingest_mortality, ingest_population, ingest_reported, ingest_subnational, ingest_temperature,
    write_mortality, InputPaths, MortalityData, SubnationalRow,
};
pub use types::*;
