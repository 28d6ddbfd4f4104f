use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SubnationalSection;
use crate::covariate::{
    apportion_annual_country, benchmark_partial, expected_draws, observed_national, predict_no_data, CountryDraws,
    PosteriorDraws,
};
use crate::data::{CovariatePanel, HistoricSeries, MortalitySeries, SubnationalRow, Tier, PANDEMIC_MONTHS};
use crate::error::{Error, Result};
use crate::gamma::ExpectedDistribution;
use crate::mcmc::McmcConfig;
use crate::rng;
use crate::stats;
use crate::subnational::{
    constrained_count_mcmc, estimate_national, fit_share_model, MonthSource, ShareFit, ShareSource, SubnationalPanel,
    SurveillanceData,
};

/// How a country's pandemic deaths were obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// All 24 months observed; only expected deaths are uncertain.
    Observed,
    /// Observed prefix, benchmarked covariate-model predictions after it.
    Benchmarked,
    /// Annual totals split over months by the covariate model.
    AnnualApportioned,
    /// Region-share model, with AR1 extrapolation of a single-region tail.
    SubnationalShare,
    /// Annual totals split by the total-preserving sampler, informed by a
    /// surveillance region and covariate-model anchors.
    SubnationalConstrained,
    CovariatePrediction,
}

impl Route {
    pub fn label(self) -> &'static str {
        match self {
            Route::Observed => "observed",
            Route::Benchmarked => "benchmarked",
            Route::AnnualApportioned => "annual_apportioned",
            Route::SubnationalShare => "subnational_share",
            Route::SubnationalConstrained => "subnational_constrained",
            Route::CovariatePrediction => "covariate_prediction",
        }
    }
}

/// Tier after accounting for subnational rows, and the route it implies.
pub fn route(series: &MortalitySeries, has_subnational: bool) -> (Tier, Route) {
    if has_subnational && matches!(series.tier, Tier::SubnationalOrAnnual | Tier::NoData) {
        let constrained = series.annual_totals.iter().any(Option::is_some);
        let r = if constrained { Route::SubnationalConstrained } else { Route::SubnationalShare };
        return (Tier::SubnationalOrAnnual, r);
    }
    let r = match series.tier {
        Tier::FullNational => Route::Observed,
        Tier::PartialNational { .. } => Route::Benchmarked,
        Tier::SubnationalOrAnnual => Route::AnnualApportioned,
        Tier::NoData => Route::CovariatePrediction,
    };
    (series.tier, r)
}

pub struct CountryContext<'a> {
    pub series: &'a MortalitySeries,
    pub history: Option<&'a HistoricSeries>,
    pub subnational: &'a [SubnationalRow],
    pub expected: &'a ExpectedDistribution,
    pub covariate: &'a PosteriorDraws,
    pub panel: &'a CovariatePanel,
    pub config: &'a SubnationalSection,
    pub seed: u64,
}

pub fn predict_country(ctx: &CountryContext, route: Route) -> Result<CountryDraws> {
    let c = &ctx.series.country;
    let mut r = rng::stream(ctx.seed, &["predict", c.as_str()]);
    let s = ctx.covariate.len();
    match route {
        Route::Observed => observed_national(&mut r, ctx.series, ctx.expected, s),
        Route::Benchmarked => Ok(benchmark_partial(&mut r, ctx.covariate, ctx.series, ctx.expected, ctx.panel)?.0),
        Route::AnnualApportioned => {
            apportion_annual_country(&mut r, ctx.covariate, &ctx.series.annual_totals, ctx.expected, ctx.panel, c)
        }
        Route::CovariatePrediction => predict_no_data(&mut r, ctx.covariate, ctx.expected, ctx.panel, c),
        Route::SubnationalShare | Route::SubnationalConstrained => subnational(ctx, route, &mut r),
    }
}

fn share_fit(ctx: &CountryContext, panel: &SubnationalPanel) -> Result<ShareFit> {
    let config = McmcConfig { keep: ctx.covariate.len(), ..ctx.config.share_mcmc.clone() };
    let fit = fit_share_model(panel, &config, rng::child_seed(ctx.seed, &["share", panel.country.as_str()]))?;
    if fit.len() != ctx.covariate.len() {
        return Err(Error::Config(format!(
            "share model kept {} draws but the covariate model kept {}; raise subnational.share_mcmc.draws",
            fit.len(),
            ctx.covariate.len()
        )));
    }
    Ok(fit)
}

fn subnational<R: Rng>(ctx: &CountryContext, route: Route, r: &mut R) -> Result<CountryDraws> {
    let c = &ctx.series.country;
    let history = ctx
        .history
        .ok_or_else(|| Error::Precondition(format!("{c}: the share model needs historic national totals")))?;
    let panel = SubnationalPanel::from_rows(c, ctx.subnational, history)?;
    let fit = share_fit(ctx, &panel)?;
    let fallback = predict_no_data(r, ctx.covariate, ctx.expected, ctx.panel, c)?;
    let s = ctx.covariate.len();
    let mut deaths = fallback.deaths.clone();

    let mut constrained_years = [false; 2];
    if route == Route::SubnationalConstrained {
        for (v, total) in ctx.series.annual_totals.iter().enumerate() {
            let Some(total) = total else { continue };
            let months: Vec<usize> = (12 * v..12 * v + 12).collect();
            let Some(z) = months
                .iter()
                .map(|&t| panel.pandemic_month(t).filter(|m| m.reporting() > 0).map(|m| m.observed_sum() as u64))
                .collect::<Option<Vec<u64>>>()
            else {
                log::warn!("{c}: year {} lacks complete surveillance months; using the share model", v + 1);
                continue;
            };
            let anchors: Vec<f64> = months.iter().map(|&t| stats::mean(&fallback.deaths[t]).max(1.0)).collect();
            let shares: Vec<Vec<f64>> = (0..fit.len())
                .map(|d| {
                    months
                        .iter()
                        .map(|&t| {
                            let m = panel.pandemic_month(t).expect("checked above");
                            let e = stats::normal(r, 0.0, fit.sigma_e[d]);
                            fit.reporting_share(d, e, &m.mask()).min(1.0 - 1e-12)
                        })
                        .collect()
                })
                .collect();
            let total = total.round() as u64;
            let start = feasible_start(total, &z, &anchors)
                .ok_or_else(|| Error::Validation(format!("{c}: surveillance counts exceed the annual total")))?;
            let surveillance = SurveillanceData { counts: z, shares: ShareSource::Draws(shares) };
            let out = constrained_count_mcmc(r, total, &anchors, Some(&surveillance), &start, &ctx.config.constrained)?;
            if out.draws.len() < s {
                return Err(Error::Config(format!(
                    "constrained sampler retained {} draws, fewer than the {s} required",
                    out.draws.len()
                )));
            }
            for (k, &t) in months.iter().enumerate() {
                deaths[t] = (0..s).map(|i| out.draws[i * out.draws.len() / s][k] as f64).collect();
            }
            constrained_years[v] = true;
        }
    }

    if constrained_years.iter().any(|y| !y) {
        let est = estimate_national(
            r,
            &fit,
            &panel,
            ctx.expected,
            &ctx.config.ar1_mcmc,
            rng::child_seed(ctx.seed, &["ar1", c.as_str()]),
        )?;
        for t in 0..PANDEMIC_MONTHS {
            if !constrained_years[t / 12] && est.source[t] != MonthSource::Unavailable {
                deaths[t] = est.deaths[t].clone();
            }
        }
    }
    Ok(CountryDraws { country: c.clone(), deaths, expected: expected_draws(r, ctx.expected, s)? })
}

/// z plus the remainder allocated in proportion to the anchor excess over z,
/// with largest-remainder rounding.
fn feasible_start(total: u64, z: &[u64], anchors: &[f64]) -> Option<Vec<u64>> {
    let zsum: u64 = z.iter().sum();
    let rest = total.checked_sub(zsum)?;
    let w: Vec<f64> = z.iter().zip(anchors).map(|(z, a)| (a - *z as f64).max(1.0)).collect();
    let wsum: f64 = w.iter().sum();
    let raw: Vec<f64> = w.iter().map(|w| rest as f64 * w / wsum).collect();
    let mut out: Vec<u64> = z.iter().zip(&raw).map(|(z, x)| z + x.floor() as u64).collect();
    let mut short = total - out.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for i in order.into_iter().cycle() {
        if short == 0 {
            break;
        }
        out[i] += 1;
        short -= 1;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Iso3;

    #[test]
    fn start_respects_surveillance_and_total() {
        let s = feasible_start(1000, &[10, 20, 30], &[100.0, 400.0, 500.0]).unwrap();
        assert_eq!(s.iter().sum::<u64>(), 1000);
        assert!(s.iter().zip([10, 20, 30]).all(|(a, b)| *a >= b));
        assert!(feasible_start(50, &[10, 20, 30], &[1.0; 3]).is_none());
    }

    #[test]
    fn routing_follows_tiers() {
        let c: Iso3 = "AAA".parse().unwrap();
        let mut s = MortalitySeries::no_data(c);
        assert_eq!(route(&s, false), (Tier::NoData, Route::CovariatePrediction));
        assert_eq!(route(&s, true).1, Route::SubnationalShare);
        s.annual_totals = [Some(100.0), None];
        s.tier = s.infer_tier();
        assert_eq!(route(&s, false).1, Route::AnnualApportioned);
        assert_eq!(route(&s, true).1, Route::SubnationalConstrained);
        s.annual_totals = [None, None];
        s.counts = vec![Some(1.0); 24];
        s.tier = s.infer_tier();
        assert_eq!(route(&s, true), (Tier::FullNational, Route::Observed));
        for v in &mut s.counts[10..] {
            *v = None;
        }
        s.tier = s.infer_tier();
        assert_eq!(route(&s, false).1, Route::Benchmarked);
        assert_eq!(route(&s, true).1, Route::Benchmarked);
    }
}
