//! Temperature-driven month shares for countries with annual totals only.
//!
//! Monthly counts in each country-year are modelled as Poisson with
//! intensity λ·exp(βz). Integrating λ out under a 1/λ prior leaves a
//! multinomial in the months with probabilities softmax(βz), so β is fitted
//! by multinomial maximum likelihood and never needs the nuisance intensities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Granularity, HistoricSeries, Iso3, TemperatureTable};
use crate::error::{Error, Result};
use crate::stats;

/// One country-year: the active months' temperatures and counts.
#[derive(Clone, Debug, PartialEq)]
pub struct SeasonalGroup {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureModel {
    pub beta: f64,
    pub sd: f64,
    pub countries: Vec<Iso3>,
    pub country_years: usize,
}

/// Country-years with 12 observed months and a temperature series.
pub fn seasonal_groups(histories: &[HistoricSeries], temps: &TemperatureTable) -> (Vec<SeasonalGroup>, Vec<Iso3>) {
    let mut groups = Vec::new();
    let mut countries = Vec::new();
    for h in histories.iter().filter(|h| h.granularity == Granularity::Monthly) {
        let mut used = false;
        for year in h.span() {
            let Some(z) = temps.year(&h.country, year) else { continue };
            let y: Option<Vec<f64>> = (1..=12).map(|m| h.monthly.get(&(year, m)).copied()).collect();
            if let Some(y) = y {
                groups.push(SeasonalGroup { z: z.to_vec(), y });
                used = true;
            }
        }
        if used {
            countries.push(h.country.clone());
        }
    }
    (groups, countries)
}

pub fn fit_temperature_model(histories: &[HistoricSeries], temps: &TemperatureTable) -> Result<TemperatureModel> {
    let (groups, countries) = seasonal_groups(histories, temps);
    if groups.is_empty() {
        return Err(Error::Precondition(
            "no country-year has 12 observed months and temperatures".into(),
        ));
    }
    let (beta, sd) = fit_groups(&groups)?;
    Ok(TemperatureModel { beta, sd, countries, country_years: groups.len() })
}

/// Multinomial log-likelihood and its first two derivatives in β.
fn multinomial_terms(groups: &[SeasonalGroup], beta: f64) -> (f64, f64, f64) {
    let (mut ll, mut grad, mut info) = (0.0, 0.0, 0.0);
    for g in groups {
        let total: f64 = g.y.iter().sum();
        if total == 0.0 {
            continue;
        }
        let eta: Vec<f64> = g.z.iter().map(|z| beta * z).collect();
        let p = stats::softmax(&eta);
        let lse = stats::log_sum_exp(&eta);
        let ez: f64 = p.iter().zip(&g.z).map(|(p, z)| p * z).sum();
        let ez2: f64 = p.iter().zip(&g.z).map(|(p, z)| p * z * z).sum();
        for (y, e) in g.y.iter().zip(&eta) {
            ll += y * (e - lse);
        }
        grad += g.y.iter().zip(&g.z).map(|(y, z)| y * z).sum::<f64>() - total * ez;
        info += total * (ez2 - ez * ez);
    }
    (ll, grad, info)
}

pub fn multinomial_log_likelihood(groups: &[SeasonalGroup], beta: f64) -> f64 {
    multinomial_terms(groups, beta).0
}

fn check_identifiable(groups: &[SeasonalGroup]) -> Result<()> {
    let varies = groups.iter().any(|g| {
        g.y.iter().sum::<f64>() > 0.0 && g.z.iter().any(|z| (z - g.z[0]).abs() > 1e-12 * (1.0 + g.z[0].abs()))
    });
    if varies {
        Ok(())
    } else {
        Err(Error::Unidentifiable(
            "temperatures are constant within every country-year; the temperature coefficient is not identified"
                .into(),
        ))
    }
}

/// Direct Newton maximization of the multinomial likelihood. Returns the
/// estimate and its standard deviation from the observed information.
pub fn fit_groups(groups: &[SeasonalGroup]) -> Result<(f64, f64)> {
    for g in groups {
        if g.z.len() != g.y.len() || g.z.is_empty() {
            return Err(Error::Validation("seasonal group with mismatched temperatures and counts".into()));
        }
    }
    check_identifiable(groups)?;
    let mut beta = 0.0;
    let max_iter = 200;
    for _ in 0..max_iter {
        let (ll, grad, info) = multinomial_terms(groups, beta);
        if info <= 0.0 || !info.is_finite() {
            break;
        }
        let mut step = grad / info;
        while multinomial_terms(groups, beta + step).0 < ll - 1e-12 * ll.abs() && step.abs() > 1e-14 {
            step *= 0.5;
        }
        beta += step;
        if step.abs() < 1e-13 * (1.0 + beta.abs()) {
            let (_, grad, info) = multinomial_terms(groups, beta);
            if grad.abs() < 1e-6 * (1.0 + info.sqrt()) {
                return Ok((beta, 1.0 / info.sqrt()));
            }
        }
    }
    let (_, grad, _) = multinomial_terms(groups, beta);
    Err(Error::NonConvergence {
        what: "temperature coefficient".into(),
        iterations: max_iter,
        gradient_norm: grad.abs(),
        last_iterate: vec![beta],
    })
}

/// Month shares p_m = exp(βz_m) / Σ exp(βz).
pub fn month_shares(beta: f64, z: &[f64; 12]) -> [f64; 12] {
    let eta: Vec<f64> = z.iter().map(|z| beta * z).collect();
    let p = stats::softmax(&eta);
    let mut out = [0.0; 12];
    out.copy_from_slice(&p);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoissonTrickReport {
    pub beta_multinomial: f64,
    pub beta_poisson: f64,
    pub difference: f64,
    /// Spread over a β grid of (eliminated Poisson marginal − multinomial
    /// log-likelihood); zero when the two differ by a constant only.
    pub marginal_offset_spread: f64,
}

/// Fit β twice: by direct multinomial maximization, and as a Poisson GLM
/// with one free intercept per country-year. Also checks that the Poisson
/// marginal with intensities integrated out matches the multinomial
/// likelihood up to a constant.
pub fn verify_poisson_trick(groups: &[SeasonalGroup]) -> Result<PoissonTrickReport> {
    let (beta_multinomial, _) = fit_groups(groups)?;
    let beta_poisson = fit_poisson_with_intercepts(groups)?;
    let offsets: Vec<f64> = [-1.0, -0.3, 0.0, 0.2, 0.7, 1.5]
        .iter()
        .map(|&b| eliminated_poisson_marginal(groups, beta_multinomial + b) - multinomial_log_likelihood(groups, beta_multinomial + b))
        .collect();
    let spread = offsets.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - offsets.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(PoissonTrickReport {
        beta_multinomial,
        beta_poisson,
        difference: (beta_multinomial - beta_poisson).abs(),
        marginal_offset_spread: spread,
    })
}

/// log ∫ Π Poisson(y_m | λ g_m) λ⁻¹ dλ in closed form.
fn eliminated_poisson_marginal(groups: &[SeasonalGroup], beta: f64) -> f64 {
    let mut total = 0.0;
    for g in groups {
        let n: f64 = g.y.iter().sum();
        if n == 0.0 {
            continue;
        }
        let log_g: Vec<f64> = g.z.iter().map(|z| beta * z).collect();
        let log_big_g = stats::log_sum_exp(&log_g);
        let lfact: f64 = g.y.iter().map(|y| statrs::function::gamma::ln_gamma(y + 1.0)).sum();
        total += statrs::function::gamma::ln_gamma(n) - n * log_big_g
            + g.y.iter().zip(&log_g).map(|(y, l)| y * l).sum::<f64>()
            - lfact;
    }
    total
}

/// Poisson regression log μ = a_g + βz by Newton iterations on all
/// parameters jointly.
fn fit_poisson_with_intercepts(groups: &[SeasonalGroup]) -> Result<f64> {
    let active: Vec<&SeasonalGroup> = groups.iter().filter(|g| g.y.iter().sum::<f64>() > 0.0).collect();
    let k = active.len();
    let mut theta = DVector::zeros(k + 1);
    for (i, g) in active.iter().enumerate() {
        theta[i] = (g.y.iter().sum::<f64>() / g.y.len() as f64).ln();
    }
    let loglik = |theta: &DVector<f64>| -> f64 {
        active
            .iter()
            .enumerate()
            .map(|(i, g)| {
                g.z.iter()
                    .zip(&g.y)
                    .map(|(z, y)| {
                        let eta = theta[i] + theta[k] * z;
                        y * eta - eta.exp()
                    })
                    .sum::<f64>()
            })
            .sum()
    };
    let max_iter = 500;
    let mut grad = DVector::zeros(k + 1);
    for _ in 0..max_iter {
        grad = DVector::zeros(k + 1);
        let mut hess = DMatrix::zeros(k + 1, k + 1);
        for (i, g) in active.iter().enumerate() {
            for (z, y) in g.z.iter().zip(&g.y) {
                let mu = (theta[i] + theta[k] * z).exp();
                grad[i] += y - mu;
                grad[k] += (y - mu) * z;
                hess[(i, i)] += mu;
                hess[(i, k)] += mu * z;
                hess[(k, i)] += mu * z;
                hess[(k, k)] += mu * z * z;
            }
        }
        let Some(chol) = hess.cholesky() else {
            return Err(Error::Unidentifiable("Poisson information matrix is singular".into()));
        };
        let mut step = chol.solve(&grad);
        let current = loglik(&theta);
        while loglik(&(&theta + &step)) < current - 1e-12 * current.abs() && step.amax() > 1e-14 {
            step *= 0.5;
        }
        theta += &step;
        if step.amax() < 1e-13 {
            return Ok(theta[k]);
        }
    }
    Err(Error::NonConvergence {
        what: "Poisson intercept model".into(),
        iterations: max_iter,
        gradient_norm: grad.norm(),
        last_iterate: theta.as_slice().to_vec(),
    })
}
