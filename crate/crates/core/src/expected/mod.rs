//! Expected (no-crisis) death counts from pre-2020 history.

mod basis;
mod fit;

pub use basis::{CyclicBasis, PSplineBasis};
pub use fit::{
    fit_annual_expected, fit_annual_with, fit_monthly_expected, fit_monthly_with, predict_log_expected,
    ExpectedFit, FitOptions, LogPrediction, TrendBasis, TrendKind, SEASONAL_KNOTS,
};
