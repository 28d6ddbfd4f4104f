use serde::{Deserialize, Serialize};

use super::cv::CvReport;
use crate::covariate::{fitted_means, PosteriorDraws};
use crate::data::{CovariatePanel, Iso3, PandemicMonth};
use crate::error::Result;

/// (y − ŷ) / sqrt(ŷ (1 + ŷ / τ)) where ŷ = Ê θ̂.
pub fn standardized_residual(y: f64, fitted: f64, tau: f64) -> f64 {
    (y - fitted) / (fitted * (1.0 + fitted / tau)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub country: Iso3,
    pub t: PandemicMonth,
    pub region: Option<String>,
    pub fitted: f64,
    pub residual: f64,
}

pub fn in_sample_residuals(
    draws: &PosteriorDraws,
    panel: &CovariatePanel,
    region_of: impl Fn(&Iso3) -> Option<String>,
) -> Result<Vec<ResidualRow>> {
    let fitted = fitted_means(draws, panel)?;
    Ok(draws
        .cells
        .iter()
        .zip(fitted)
        .map(|(c, f)| ResidualRow {
            country: c.country.clone(),
            t: c.t,
            region: region_of(&c.country),
            fitted: f,
            residual: standardized_residual(c.y, f, c.tau),
        })
        .collect())
}

/// Residuals of held-out cells, with ŷ the predictive mean of the fold
/// that excluded them.
pub fn out_of_fold_residuals(
    report: &CvReport,
    tau_of: impl Fn(&Iso3, PandemicMonth) -> f64,
    population_of: impl Fn(&Iso3, PandemicMonth) -> f64,
    region_of: impl Fn(&Iso3) -> Option<String>,
) -> Vec<ResidualRow> {
    report
        .cells
        .iter()
        .map(|c| {
            let y = c.observed_rate * population_of(&c.country, c.t);
            ResidualRow {
                country: c.country.clone(),
                t: c.t,
                region: region_of(&c.country),
                fitted: c.predicted_mean,
                residual: standardized_residual(y, c.predicted_mean, tau_of(&c.country, c.t)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{rng, stats};
    use rand::Rng;

    #[test]
    fn unit_scaling() {
        assert_eq!(standardized_residual(500.0, 500.0, 100.0), 0.0);
        let sd = (500.0f64 * (1.0 + 500.0 / 100.0)).sqrt();
        assert!((standardized_residual(500.0 + sd, 500.0, 100.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn model_simulated_residuals_are_standardized() {
        let mut r = rng::stream(1, &["resid"]);
        let n = 10_000;
        let res: Vec<f64> = (0..n)
            .map(|_| {
                let mean = r.random_range(50.0..5000.0f64);
                let tau = r.random_range(20.0..2000.0f64);
                let y = stats::negbin(&mut r, mean, tau) as f64;
                standardized_residual(y, mean, tau)
            })
            .collect();
        let m = stats::mean(&res);
        let v = stats::sample_variance(&res);
        assert!(m.abs() < 0.05, "mean {m}");
        assert!((v - 1.0).abs() < 0.1, "variance {v}");
    }
}
