//! Cross-validation of the covariate model, standardized residuals and the
//! synthetic simulation studies.

mod cv;
mod residuals;
mod suite;

pub use cv::{
    run_cv, score_cells, CellPrediction, CellRecord, CvInput, CvMetrics, CvReport, CvScheme, FoldRecord, FoldStatus,
    MIN_FOLDS,
};
pub use residuals::{in_sample_residuals, out_of_fold_residuals, standardized_residual, ResidualRow};
pub use suite::{
    run_constrained_simulation, run_gamma_sweep, run_share_simulation, run_simulation_suite, Check, ConstrainedSimReport, GammaSweepRow, ShareSimReport, SimulationSuiteConfig,
    SimulationSuiteReport,
};
