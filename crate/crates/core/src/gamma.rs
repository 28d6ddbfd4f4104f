//! Gamma approximations to the distribution of expected counts.
//!
//! Log-scale predictions are turned into samples of the expected count and
//! summarized by a gamma distribution with the same mean and variance
//! (variance with the n − 1 denominator).

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::data::{Iso3, PandemicMonth, TemperatureTable, PANDEMIC_START_YEAR};
use crate::error::{Error, Result};
use crate::expected::{predict_log_expected, ExpectedFit};
use crate::rng;
use crate::seasonal::{month_shares, TemperatureModel};
use crate::stats;

pub const DEFAULT_SAMPLES: usize = 10_000;
pub const MIN_SAMPLES: usize = 1_000;
/// Relative variance below which a sample is treated as degenerate.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Shape used for degenerate (near-certain) expected counts.
pub const TAU_MAX: f64 = 1e8;
/// KS distance above which the gamma approximation is flagged.
pub const KS_POOR_FIT: f64 = 0.05;

/// Gamma with mean `mean` and shape `shape` (rate shape/mean).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub mean: f64,
    pub shape: f64,
}

impl GammaParams {
    pub fn rate(&self) -> f64 {
        self.shape / self.mean
    }

    pub fn variance(&self) -> f64 {
        self.mean * self.mean / self.shape
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match Gamma::new(self.shape, self.rate()) {
            Ok(g) => g.cdf(x),
            Err(_) => f64::from(u8::from(x >= self.mean)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        stats::gamma(rng, self.shape, self.rate())
    }
}

/// Method-of-moments gamma for a set of positive samples.
pub fn moment_match(samples: &[f64]) -> GammaParams {
    let m = stats::mean(samples);
    let v = if samples.len() > 1 { stats::sample_variance(samples) } else { 0.0 };
    let shape = if v < VARIANCE_FLOOR * m * m { TAU_MAX } else { m * m / v };
    GammaParams { mean: m, shape }
}

fn check_samples(s: usize) -> Result<()> {
    if s < MIN_SAMPLES {
        return Err(Error::Precondition(format!("at least {MIN_SAMPLES} samples are required, got {s}")));
    }
    Ok(())
}

/// Samples of exp(N(eta, sigma²)).
pub fn lognormal_samples<R: Rng + ?Sized>(rng: &mut R, eta: f64, sigma: f64, s: usize) -> Vec<f64> {
    (0..s).map(|_| stats::normal(rng, eta, sigma).exp()).collect()
}

pub fn gamma_from_monthly<R: Rng + ?Sized>(rng: &mut R, eta: f64, sigma: f64, s: usize) -> Result<GammaParams> {
    check_samples(s)?;
    Ok(moment_match(&lognormal_samples(rng, eta, sigma, s)))
}

/// Split sampled annual totals over months with shares driven by sampled
/// temperature coefficients, then moment-match each month.
pub fn gamma_from_annual<R: Rng + ?Sized>(
    rng: &mut R,
    eta: f64,
    sigma: f64,
    beta_mean: f64,
    beta_sd: f64,
    temps: &[f64; 12],
    s: usize,
) -> Result<[GammaParams; 12]> {
    check_samples(s)?;
    let mut by_month = vec![Vec::with_capacity(s); 12];
    for _ in 0..s {
        let total = stats::normal(rng, eta, sigma).exp();
        let beta = stats::normal(rng, beta_mean, beta_sd);
        for (m, p) in month_shares(beta, temps).iter().enumerate() {
            by_month[m].push(total * p);
        }
    }
    Ok(std::array::from_fn(|m| moment_match(&by_month[m])))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub distance: f64,
    /// 95% critical value of the one-sample KS statistic.
    pub critical_95: f64,
    pub poor_fit: bool,
}

pub fn gamma_fit_diagnostic(samples: &[f64], fitted: &GammaParams) -> Result<KsReport> {
    check_samples(samples.len())?;
    let distance = stats::ks_distance(samples, |x| fitted.cdf(x));
    Ok(KsReport {
        distance,
        critical_95: 1.358 / (samples.len() as f64).sqrt(),
        poor_fit: distance > KS_POOR_FIT,
    })
}

/// Gamma parameters for the 24 pandemic months of one country.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedDistribution {
    pub country: Iso3,
    pub months: Vec<GammaParams>,
}

impl ExpectedDistribution {
    pub fn get(&self, t: PandemicMonth) -> GammaParams {
        self.months[t.offset()]
    }
}

/// Expected-count distribution for a country with a monthly baseline.
pub fn expected_from_monthly_fit(fit: &ExpectedFit, seed: u64, s: usize) -> Result<ExpectedDistribution> {
    let mut rng = rng::stream(seed, &["gamma", fit.country.as_str()]);
    let months = (1..=24)
        .map(|t| {
            let p = predict_log_expected(fit, t)?;
            gamma_from_monthly(&mut rng, p.eta, p.sigma, s)
        })
        .collect::<Result<_>>()?;
    Ok(ExpectedDistribution { country: fit.country.clone(), months })
}

/// Expected-count distribution for a country with annual totals only.
pub fn expected_from_annual_fit(
    fit: &ExpectedFit,
    model: &TemperatureModel,
    temps: &TemperatureTable,
    seed: u64,
    s: usize,
) -> Result<ExpectedDistribution> {
    let mut rng = rng::stream(seed, &["gamma", fit.country.as_str()]);
    let mut months = Vec::with_capacity(24);
    for v in 1..=2 {
        let year = PANDEMIC_START_YEAR + v as i32 - 1;
        let z = temps.year(&fit.country, year).ok_or_else(|| {
            Error::Precondition(format!("{}: no complete temperature series for {year}", fit.country))
        })?;
        let p = predict_log_expected(fit, v)?;
        months.extend(gamma_from_annual(&mut rng, p.eta, p.sigma, model.beta, model.sd, &z, s)?);
    }
    Ok(ExpectedDistribution { country: fit.country.clone(), months })
}
