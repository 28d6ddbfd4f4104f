use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the estimation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("validation: {0}")]
    Validation(String),

    #[error("precondition: {0}")]
    Precondition(String),

    #[error("{what} out of range: {value} (allowed {allowed})")]
    Range {
        what: &'static str,
        value: i64,
        allowed: String,
    },

    #[error("{what} did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        gradient_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("parameter not identifiable: {0}")]
    Unidentifiable(String),

    #[error("sampler diagnostics failed:\n{0}")]
    Diagnostics(crate::mcmc::DiagnosticsTable),

    #[error("misaligned draws: expected {expected}, found {found}")]
    Misaligned { expected: usize, found: usize },

    #[error("improper posterior: {0}")]
    ImproperPosterior(String),

    #[error("stage `{stage}` failed{}: {source}", country.as_ref().map(|c| format!(" for {c}")).unwrap_or_default())]
    Stage {
        stage: String,
        country: Option<String>,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("draws file: {0}")]
    DrawsFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn stage(stage: &str, country: Option<&str>, source: Error) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            country: country.map(str::to_string),
            source: Box::new(source),
        }
    }

    /// Process exit code for the CLI: 2 for bad input, 3 for sampler
    /// diagnostics, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Precondition(_)
            | Error::Range { .. }
            | Error::Misaligned { .. }
            | Error::Config(_)
            | Error::DrawsFormat(_)
            | Error::Csv(_) => 2,
            Error::Diagnostics(_) | Error::NonConvergence { .. } => 3,
            _ => 1,
        }
    }
}
