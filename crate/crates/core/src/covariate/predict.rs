//! Posterior predictive draws for countries without complete national data.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sampler::PosteriorDraws;
use crate::data::{CovariatePanel, Iso3, MortalitySeries, PandemicMonth, PANDEMIC_MONTHS, PANDEMIC_YEARS};
use crate::error::{Error, Result};
use crate::gamma::{ExpectedDistribution, GammaParams};
use crate::stats;

/// Joint draws of deaths and expected deaths for the 24 pandemic months,
/// indexed `[month offset][draw]`. Observed months repeat the observed count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountryDraws {
    pub country: Iso3,
    pub deaths: Vec<Vec<f64>>,
    pub expected: Vec<Vec<f64>>,
}

impl CountryDraws {
    pub fn draws(&self) -> usize {
        self.deaths.first().map_or(0, Vec::len)
    }
}

fn check_expected(expected: &ExpectedDistribution) -> Result<()> {
    if expected.months.len() != PANDEMIC_MONTHS || expected.months.iter().any(|g| !(g.mean > 0.0 && g.shape > 0.0)) {
        return Err(Error::Precondition(format!(
            "{}: expected-count distribution must cover 24 months with positive parameters",
            expected.country
        )));
    }
    Ok(())
}

/// log θ without the overdispersion effect, for every draw.
fn linear_predictor(draws: &PosteriorDraws, panel: &CovariatePanel, c: &Iso3, t: PandemicMonth) -> Result<Vec<f64>> {
    let row = draws.spec.design_row(panel, c, t)?;
    Ok(draws.coefficients.iter().map(|w| row.dot(w)).collect())
}

fn expected_draw<R: Rng + ?Sized>(rng: &mut R, g: GammaParams) -> f64 {
    if g.shape >= crate::gamma::TAU_MAX {
        g.mean
    } else {
        g.sample(rng)
    }
}

/// Deaths ~ Poisson(E θ) with E drawn from its gamma distribution, which
/// marginally is NegBin(Ê θ, τ̂).
fn predict_month<R: Rng + ?Sized>(rng: &mut R, g: GammaParams, theta: f64) -> (f64, f64) {
    let e = expected_draw(rng, g);
    (stats::poisson(rng, e * theta) as f64, e)
}

pub fn predict_no_data<R: Rng + ?Sized>(
    rng: &mut R,
    draws: &PosteriorDraws,
    expected: &ExpectedDistribution,
    panel: &CovariatePanel,
    country: &Iso3,
) -> Result<CountryDraws> {
    check_expected(expected)?;
    let mut out = CountryDraws { country: country.clone(), deaths: Vec::new(), expected: Vec::new() };
    for t in PandemicMonth::all() {
        let lp = linear_predictor(draws, panel, country, t)?;
        let g = expected.get(t);
        let (mut d, mut e) = (Vec::with_capacity(lp.len()), Vec::with_capacity(lp.len()));
        for (s, l) in lp.iter().enumerate() {
            let theta = (l + stats::normal(rng, 0.0, draws.sigma_eps[s])).exp();
            let (y, ed) = predict_month(rng, g, theta);
            d.push(y);
            e.push(ed);
        }
        out.deaths.push(d);
        out.expected.push(e);
    }
    Ok(out)
}

/// Partial national series: observed months are kept, later months are
/// predicted and scaled by f = y_T / (Ê_T θ_T) at the last observed month T.
/// Also returns the benchmark factor draws (`None` when y_T = 0).
pub fn benchmark_partial<R: Rng + ?Sized>(
    rng: &mut R,
    draws: &PosteriorDraws,
    series: &MortalitySeries,
    expected: &ExpectedDistribution,
    panel: &CovariatePanel,
) -> Result<(CountryDraws, Option<Vec<f64>>)> {
    check_expected(expected)?;
    let c = &series.country;
    let last = series.observed_prefix();
    if last == 0 {
        return Err(Error::Precondition(format!("{c}: benchmarking needs at least one observed month")));
    }
    let t_last = PandemicMonth::new(last)?;
    let y_last = series.observed(t_last).expect("observed prefix");
    let index = draws.cell_index();
    let in_sample = index.get(&(c.clone(), t_last)).copied();
    let lp_last = linear_predictor(draws, panel, c, t_last)?;
    let factor: Option<Vec<f64>> = if y_last > 0.0 {
        let e_last = expected.get(t_last).mean;
        Some(
            lp_last
                .iter()
                .enumerate()
                .map(|(s, l)| {
                    let eps = match in_sample {
                        Some(i) => draws.eps[s][i],
                        None => stats::normal(rng, 0.0, draws.sigma_eps[s]),
                    };
                    benchmark_factor(y_last, e_last, (l + eps).exp())
                })
                .collect(),
        )
    } else {
        log::warn!("{c}: last observed count is zero; predictions for later months are not benchmarked");
        None
    };
    let n = draws.len();
    let mut out = CountryDraws { country: c.clone(), deaths: Vec::new(), expected: Vec::new() };
    for t in PandemicMonth::all() {
        let g = expected.get(t);
        if let Some(y) = series.observed(t).filter(|_| t.index() <= last) {
            out.deaths.push(vec![y; n]);
            out.expected.push((0..n).map(|_| expected_draw(rng, g)).collect());
            continue;
        }
        let lp = linear_predictor(draws, panel, c, t)?;
        let (mut d, mut e) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for (s, l) in lp.iter().enumerate() {
            let f = factor.as_ref().map_or(1.0, |f| f[s]);
            let theta = (l + stats::normal(rng, 0.0, draws.sigma_eps[s])).exp() * f;
            let (y, ed) = predict_month(rng, g, theta);
            d.push(y);
            e.push(ed);
        }
        out.deaths.push(d);
        out.expected.push(e);
    }
    Ok((out, factor))
}

pub fn benchmark_factor(y_last: f64, e_last: f64, theta_last: f64) -> f64 {
    y_last / (e_last * theta_last)
}

/// Split observed annual totals over months with probabilities
/// Ê_t θ_t / Σ Ê θ, drawn per posterior draw. Years without a total are
/// predicted as for a country without data.
pub fn apportion_annual_country<R: Rng + ?Sized>(
    rng: &mut R,
    draws: &PosteriorDraws,
    annual_totals: &[Option<f64>; PANDEMIC_YEARS],
    expected: &ExpectedDistribution,
    panel: &CovariatePanel,
    country: &Iso3,
) -> Result<CountryDraws> {
    check_expected(expected)?;
    for total in annual_totals.iter().flatten() {
        if *total < 0.0 || !total.is_finite() {
            return Err(Error::Validation(format!("{country}: negative annual total {total}")));
        }
    }
    let n = draws.len();
    let mut out = CountryDraws { country: country.clone(), deaths: Vec::new(), expected: Vec::new() };
    let fallback = if annual_totals.iter().any(Option::is_none) {
        Some(predict_no_data(rng, draws, expected, panel, country)?)
    } else {
        None
    };
    for (v, total) in annual_totals.iter().enumerate() {
        let months: Vec<PandemicMonth> = (1..=12).map(|m| PandemicMonth::new(12 * v + m).expect("valid")).collect();
        let Some(total) = total else {
            let f = fallback.as_ref().expect("computed above");
            for t in &months {
                out.deaths.push(f.deaths[t.offset()].clone());
                out.expected.push(f.expected[t.offset()].clone());
            }
            continue;
        };
        let lps: Vec<Vec<f64>> =
            months.iter().map(|&t| linear_predictor(draws, panel, country, t)).collect::<Result<_>>()?;
        let mut year_deaths = vec![Vec::with_capacity(n); 12];
        for s in 0..n {
            let weights: Vec<f64> = months
                .iter()
                .enumerate()
                .map(|(m, &t)| expected.get(t).mean * (lps[m][s] + stats::normal(rng, 0.0, draws.sigma_eps[s])).exp())
                .collect();
            let z: f64 = weights.iter().sum();
            let probs: Vec<f64> = weights.iter().map(|w| w / z).collect();
            let split = stats::multinomial(rng, total.round() as u64, &probs);
            for (m, k) in split.into_iter().enumerate() {
                year_deaths[m].push(k as f64);
            }
        }
        for (m, d) in year_deaths.into_iter().enumerate() {
            let g = expected.get(months[m]);
            out.deaths.push(d);
            out.expected.push((0..n).map(|_| expected_draw(rng, g)).collect());
        }
    }
    Ok(out)
}

/// In-sample posterior predictive summary for one observed cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveCheck {
    pub country: Iso3,
    pub t: PandemicMonth,
    pub observed: f64,
    pub mean: f64,
    pub mcse: f64,
}

/// Replicate every observed cell from its fitted θ (including the fitted
/// overdispersion effect).
pub fn posterior_predictive_check<R: Rng + ?Sized>(
    rng: &mut R,
    draws: &PosteriorDraws,
    panel: &CovariatePanel,
) -> Result<Vec<PredictiveCheck>> {
    draws
        .cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let lp = linear_predictor(draws, panel, &cell.country, cell.t)?;
            let g = GammaParams { mean: cell.e_hat, shape: cell.tau };
            let reps: Vec<f64> =
                lp.iter().enumerate().map(|(s, l)| predict_month(rng, g, (l + draws.eps[s][i]).exp()).0).collect();
            Ok(PredictiveCheck {
                country: cell.country.clone(),
                t: cell.t,
                observed: cell.y,
                mean: stats::mean(&reps),
                mcse: stats::sample_sd(&reps) / (reps.len() as f64).sqrt(),
            })
        })
        .collect()
}

/// Predictive draws of deaths for one country-month with a fresh
/// overdispersion effect, as for a country without data.
pub fn predict_cell<R: Rng + ?Sized>(
    rng: &mut R,
    draws: &PosteriorDraws,
    panel: &CovariatePanel,
    country: &Iso3,
    t: PandemicMonth,
    expected: GammaParams,
) -> Result<Vec<f64>> {
    let lp = linear_predictor(draws, panel, country, t)?;
    Ok(lp
        .iter()
        .enumerate()
        .map(|(s, l)| {
            let theta = (l + stats::normal(rng, 0.0, draws.sigma_eps[s])).exp();
            predict_month(rng, expected, theta).0
        })
        .collect())
}

/// Posterior mean of Ê θ for every fitted cell, including its fitted
/// overdispersion effect.
pub fn fitted_means(draws: &PosteriorDraws, panel: &CovariatePanel) -> Result<Vec<f64>> {
    draws
        .cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let lp = linear_predictor(draws, panel, &cell.country, cell.t)?;
            let theta: Vec<f64> = lp.iter().enumerate().map(|(s, l)| (l + draws.eps[s][i]).exp()).collect();
            Ok(cell.e_hat * stats::mean(&theta))
        })
        .collect()
}

/// Draws of expected deaths for all 24 months, `[month offset][draw]`.
pub fn expected_draws<R: Rng + ?Sized>(rng: &mut R, expected: &ExpectedDistribution, draws: usize) -> Result<Vec<Vec<f64>>> {
    check_expected(expected)?;
    Ok(expected.months.iter().map(|g| (0..draws).map(|_| expected_draw(rng, *g)).collect()).collect())
}

/// A fully observed country: deaths are the observed counts in every draw;
/// only expected deaths vary.
pub fn observed_national<R: Rng + ?Sized>(
    rng: &mut R,
    series: &MortalitySeries,
    expected: &ExpectedDistribution,
    draws: usize,
) -> Result<CountryDraws> {
    let deaths = PandemicMonth::all()
        .map(|t| {
            series.observed(t).map(|y| vec![y; draws]).ok_or_else(|| {
                Error::Precondition(format!("{}: month {} is not observed", series.country, t.label()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CountryDraws { country: series.country.clone(), deaths, expected: expected_draws(rng, expected, draws)? })
}
