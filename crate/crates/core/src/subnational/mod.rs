//! National monthly mortality inferred from region-level data.

mod ar1;
mod constrained;
mod panel;
mod share;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use ar1::{ar1_tail_extrapolate, default_ar1_config, Ar1Tail, MIN_AR1_MONTHS};
pub use constrained::{
    constrained_count_mcmc, even_start, ConstrainedConfig, ConstrainedDraws, JumpSize, ShareSource, SurveillanceData,
    MAX_MOVED_MONTHS, TARGET_ACCEPTANCE,
};
pub use panel::{PanelMonth, SubnationalPanel};
pub use share::{
    default_share_config, fit_share_model, national_from_share, predict_national, ShareFit, ALPHA_PRIOR_SD,
    MIN_FITTING_MONTHS,
};

use crate::data::{Iso3, PANDEMIC_MONTHS};
use crate::error::Result;
use crate::gamma::ExpectedDistribution;
use crate::mcmc::McmcConfig;
use crate::stats;

/// How a pandemic month's national total was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonthSource {
    Share,
    Ar1Tail,
    /// No usable subnational data; left to the covariate model.
    Unavailable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NationalEstimate {
    pub country: Iso3,
    pub source: Vec<MonthSource>,
    /// Draws per pandemic month, empty where the source is `Unavailable`.
    pub deaths: Vec<Vec<f64>>,
}

/// National draws for all 24 pandemic months. Months where every reporting
/// region is known are predicted from the share model, except a trailing run
/// in which a single region of several still reports: those months (and any
/// later months without data) are extrapolated by an AR1 model on log(Y/E)
/// of the share-predicted months.
pub fn estimate_national<R: Rng + ?Sized>(
    rng: &mut R,
    fit: &ShareFit,
    panel: &SubnationalPanel,
    expected: &ExpectedDistribution,
    ar1_config: &McmcConfig,
    seed: u64,
) -> Result<NationalEstimate> {
    let months: Vec<Option<&PanelMonth>> =
        (0..PANDEMIC_MONTHS).map(|t| panel.pandemic_month(t).filter(|m| m.reporting() > 0)).collect();
    let several = panel.regions.len() > 1;
    let mut tail_start = PANDEMIC_MONTHS;
    for t in (0..PANDEMIC_MONTHS).rev() {
        match months[t] {
            None => tail_start = t,
            Some(m) if several && m.reporting() == 1 => tail_start = t,
            Some(_) => break,
        }
    }
    let mut out = NationalEstimate {
        country: panel.country.clone(),
        source: vec![MonthSource::Unavailable; PANDEMIC_MONTHS],
        deaths: vec![Vec::new(); PANDEMIC_MONTHS],
    };
    for t in 0..tail_start {
        if let Some(m) = months[t] {
            out.deaths[t] = predict_national(rng, fit, m)?;
            out.source[t] = MonthSource::Share;
        }
    }
    let history: Vec<usize> = (0..tail_start).filter(|&t| out.source[t] == MonthSource::Share).collect();
    let single_region_tail = (tail_start..PANDEMIC_MONTHS).any(|t| months[t].is_some());
    if tail_start < PANDEMIC_MONTHS && single_region_tail && history.len() >= MIN_AR1_MONTHS {
        let first = history[0];
        let span: Vec<usize> = (first..tail_start).collect();
        if span.iter().all(|t| out.source[*t] == MonthSource::Share) {
            let (mut values, mut variances) = (Vec::new(), Vec::new());
            for &t in &span {
                let e = expected.months[t].mean;
                let logs: Vec<f64> = out.deaths[t].iter().map(|y| (y.max(0.5) / e).ln()).collect();
                values.push(stats::mean(&logs));
                variances.push(stats::sample_variance(&logs));
            }
            let horizon = PANDEMIC_MONTHS - tail_start;
            let config = McmcConfig { keep: fit.len(), ..ar1_config.clone() };
            let tail = ar1_tail_extrapolate(&values, &variances, horizon, &config, seed)?;
            let e: Vec<f64> = (tail_start..PANDEMIC_MONTHS).map(|t| expected.months[t].mean).collect();
            for (h, d) in tail.back_transform(&e)?.into_iter().enumerate() {
                out.deaths[tail_start + h] = d;
                out.source[tail_start + h] = MonthSource::Ar1Tail;
            }
        }
    } else if tail_start < PANDEMIC_MONTHS {
        for t in tail_start..PANDEMIC_MONTHS {
            if let Some(m) = months[t] {
                out.deaths[t] = predict_national(rng, fit, m)?;
                out.source[t] = MonthSource::Share;
            }
        }
    }
    Ok(out)
}

/// Data generated from the share model.
#[derive(Clone, Debug)]
pub struct ShareSimulation {
    pub panel: SubnationalPanel,
    pub alpha: Vec<f64>,
    pub effects: Vec<f64>,
    /// True national totals for every period.
    pub totals: Vec<f64>,
    /// Periods (0-based) held out from fitting.
    pub held_out: Vec<usize>,
}

/// Simulate region counts for the given totals; `missing` random
/// region-period cells are removed and periods from `fit_periods` onward
/// lose their national total. Periods are labelled monthly from 2016-01.
pub fn simulate_share_panel<R: Rng + ?Sized>(
    rng: &mut R,
    alpha: &[f64],
    sigma_e: f64,
    totals: &[f64],
    missing: usize,
    fit_periods: usize,
) -> ShareSimulation {
    let k = alpha.len();
    let n = totals.len();
    let effects: Vec<f64> = (0..n).map(|_| stats::normal(rng, 0.0, sigma_e)).collect();
    let mut months: Vec<PanelMonth> = (0..n)
        .map(|t| {
            let mut logits: Vec<f64> = alpha.iter().map(|a| a + effects[t]).collect();
            logits.push(0.0);
            let counts = stats::multinomial(rng, totals[t].round() as u64, &stats::softmax(&logits));
            PanelMonth {
                year: 2016 + (t / 12) as i32,
                month: Some((t % 12) as u32 + 1),
                national: (t < fit_periods).then_some(totals[t].round()),
                regions: counts[..k].iter().map(|c| Some(*c as f64)).collect(),
            }
        })
        .collect();
    for cell in index::sample(rng, n * k, missing.min(n * k)) {
        months[cell / k].regions[cell % k] = None;
    }
    let panel = SubnationalPanel {
        country: "SIM".parse().expect("valid code"),
        regions: (1..=k).map(|i| format!("R{i}")).collect(),
        months,
    };
    ShareSimulation { panel, alpha: alpha.to_vec(), effects, totals: totals.to_vec(), held_out: (fit_periods..n).collect() }
}

/// Region log-odds and totals for the reference simulation design:
/// five regions, e_t ~ N(0, 0.5²), Y₊ = 1000 + 0.1 (1 + sin W_t) with
/// W_t = 0, π/6, …, over 24 months.
pub fn reference_share_design() -> (Vec<f64>, f64, Vec<f64>) {
    let alpha = vec![-0.25, -1.3, -1.15, -2.5, 1.75];
    let totals = (0..24).map(|t| 1000.0 + 0.1 * (1.0 + (t as f64 * std::f64::consts::PI / 6.0).sin())).collect();
    (alpha, 0.5, totals)
}

/// Twelve-month design for the constrained sampler: Y_t ~ U(5000, 20000),
/// logit p_t = −1.5 + N(0, 0.1) and anchors a_t = Y_t + N(0, 0.05 Y_t),
/// second arguments read as variances; z_t = round(Y_t p_t).
#[derive(Clone, Debug)]
pub struct ConstrainedSimulation {
    pub truth: Vec<u64>,
    pub shares: Vec<f64>,
    pub surveillance: Vec<u64>,
    pub anchors: Vec<f64>,
}

impl ConstrainedSimulation {
    pub fn total(&self) -> u64 {
        self.truth.iter().sum()
    }
}

pub fn simulate_constrained<R: Rng + ?Sized>(rng: &mut R) -> ConstrainedSimulation {
    let truth: Vec<u64> = (0..12).map(|_| rng.random_range(5000..=20000)).collect();
    let shares: Vec<f64> = (0..12).map(|_| stats::inv_logit(-1.5 + stats::normal(rng, 0.0, 0.1f64.sqrt()))).collect();
    let surveillance = truth.iter().zip(&shares).map(|(y, p)| (*y as f64 * p).round() as u64).collect();
    let anchors = truth.iter().map(|y| *y as f64 + stats::normal(rng, 0.0, (0.05 * *y as f64).sqrt())).collect();
    ConstrainedSimulation { truth, shares, surveillance, anchors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn quick() -> McmcConfig {
        default_share_config()
    }

    fn constant_panel(shares: &[f64], total: f64, periods: usize) -> SubnationalPanel {
        SubnationalPanel {
            country: "AAA".parse().unwrap(),
            regions: (0..shares.len()).map(|i| format!("R{i}")).collect(),
            months: (0..periods)
                .map(|t| PanelMonth {
                    year: 2017 + (t / 12) as i32,
                    month: Some((t % 12) as u32 + 1),
                    national: Some(total),
                    regions: shares.iter().map(|s| Some((s * total).round())).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn constant_shares_recover_log_odds() {
        let fit = fit_share_model(&constant_panel(&[0.3, 0.2], 10_000.0, 24), &quick(), 1).unwrap();
        for (k, truth) in [(0.6f64).ln(), (0.4f64).ln()].iter().enumerate() {
            let a: Vec<f64> = fit.alpha.iter().map(|v| v[k]).collect();
            let (m, sd) = (stats::mean(&a), stats::sample_sd(&a));
            assert!((m - truth).abs() < 3.0 * sd, "alpha[{k}] = {m} ± {sd}, truth {truth}");
        }
        assert!(fit.diagnostics.passed());
    }

    #[test]
    fn reference_design_recovers_parameters() {
        let (alpha, sigma, totals) = reference_share_design();
        let mut r = rng::stream(7, &["share-sim"]);
        let sim = simulate_share_panel(&mut r, &alpha, sigma, &totals, 20, 18);
        let fit = fit_share_model(&sim.panel, &quick(), 7).unwrap();
        for (k, truth) in alpha.iter().enumerate() {
            let a: Vec<f64> = fit.alpha.iter().map(|v| v[k]).collect();
            let (lo, hi) = (stats::quantile(&a, 0.025), stats::quantile(&a, 0.975));
            assert!(lo <= *truth && *truth <= hi, "alpha[{k}]: [{lo}, {hi}] vs {truth}");
        }
        assert!(fit.acceptance > 0.2, "acceptance {}", fit.acceptance);
    }

    fn p1_draws(fit: &ShareFit) -> Vec<f64> {
        (0..fit.len()).map(|s| fit.reporting_share(s, 0.0, &[true, false][..fit.regions.len()])).collect()
    }

    #[test]
    fn single_region_matches_binomial_estimate() {
        let mut r = rng::stream(3, &["binom"]);
        let n = 24;
        let totals: Vec<f64> = (0..n).map(|_| r.random_range(800.0..1200.0f64).round()).collect();
        let counts: Vec<f64> = totals.iter().map(|t| stats::binomial(&mut r, *t as u64, 0.3) as f64).collect();
        let panel = SubnationalPanel {
            country: "AAA".parse().unwrap(),
            regions: vec!["R".into()],
            months: (0..n)
                .map(|t| PanelMonth {
                    year: 2017 + (t / 12) as i32,
                    month: Some((t % 12) as u32 + 1),
                    national: Some(totals[t]),
                    regions: vec![Some(counts[t])],
                })
                .collect(),
        };
        let fit = fit_share_model(&panel, &quick(), 3).unwrap();
        let p = p1_draws(&fit);
        let pooled = counts.iter().sum::<f64>() / totals.iter().sum::<f64>();
        let se = (pooled * (1.0 - pooled) / totals.iter().sum::<f64>()).sqrt();
        let mcse = stats::sample_sd(&p) / (fit.diagnostics.min_ess()).sqrt();
        assert!((stats::mean(&p) - pooled).abs() < 0.5 * se + 4.0 * mcse, "{} vs {pooled}", stats::mean(&p));
        let ratio = stats::sample_sd(&p) / se;
        assert!((0.8..1.6).contains(&ratio), "sd ratio {ratio}");
    }

    #[test]
    fn collapsing_a_region_into_the_remainder_keeps_the_first_share() {
        let mut r = rng::stream(4, &["collapse"]);
        let n = 24;
        let mut full = constant_panel(&[0.3, 0.2], 1.0, n);
        for m in full.months.iter_mut() {
            let total = r.random_range(900..1100u64);
            let c = stats::multinomial(&mut r, total, &[0.3, 0.2, 0.5]);
            m.national = Some(total as f64);
            m.regions = vec![Some(c[0] as f64), Some(c[1] as f64)];
        }
        let mut collapsed = full.clone();
        collapsed.regions.truncate(1);
        for m in collapsed.months.iter_mut() {
            m.regions.truncate(1);
        }
        let a = p1_draws(&fit_share_model(&full, &quick(), 4).unwrap());
        let b = p1_draws(&fit_share_model(&collapsed, &quick(), 4).unwrap());
        let sd = stats::sample_sd(&a);
        assert!((stats::mean(&a) - stats::mean(&b)).abs() < 0.3 * sd, "{} vs {}", stats::mean(&a), stats::mean(&b));
        assert!((stats::sample_sd(&b) / sd - 1.0).abs() < 0.25);
    }

    #[test]
    fn never_observed_region_is_named() {
        let mut panel = constant_panel(&[0.3, 0.2], 1000.0, 12);
        for m in panel.months.iter_mut() {
            m.regions[1] = None;
        }
        let err = fit_share_model(&panel, &quick(), 1).unwrap_err().to_string();
        assert!(err.contains("R1"), "{err}");
        let short = constant_panel(&[0.3], 1000.0, 11);
        assert!(matches!(fit_share_model(&short, &quick(), 1), Err(crate::Error::Precondition(_))));
    }

    #[test]
    fn national_total_given_share() {
        let mut r = rng::stream(5, &["nb"]);
        assert_eq!(national_from_share(&mut r, 321.0, 1.0).unwrap(), 321.0);
        let draws: Vec<f64> = (0..100_000).map(|_| national_from_share(&mut r, 500.0, 0.5).unwrap()).collect();
        assert!(draws.iter().all(|d| *d >= 500.0));
        let mcse = stats::sample_sd(&draws) / (draws.len() as f64).sqrt();
        assert!((stats::mean(&draws) - 1000.0).abs() < 4.0 * mcse);
        let rem: Vec<f64> = (0..100_000).map(|_| national_from_share(&mut r, 100.0, 0.25).unwrap() - 100.0).collect();
        assert!((stats::mean(&rem) - 300.0).abs() < 4.0 * (1200.0f64 / 1e5).sqrt());
        assert!((stats::sample_variance(&rem) / 1200.0 - 1.0).abs() < 0.03);
        assert!(matches!(national_from_share(&mut r, 0.0, 0.4), Err(crate::Error::ImproperPosterior(_))));
        assert_eq!(national_from_share(&mut r, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn naive_estimator_consistency() {
        let mut r = rng::stream(6, &["naive"]);
        for (y1, p) in [(250.0, 0.8), (40.0, 0.1), (1234.0, 0.37)] {
            let d: Vec<f64> = (0..50_000).map(|_| national_from_share(&mut r, y1, p).unwrap()).collect();
            let mcse = stats::sample_sd(&d) / (d.len() as f64).sqrt();
            assert!((stats::mean(&d) - y1 / p).abs() < 4.0 * mcse, "{y1} {p}");
        }
    }

    #[test]
    fn predictions_cover_the_truth_and_exceed_reported_counts() {
        let (alpha, sigma, totals) = reference_share_design();
        let mut r = rng::stream(9, &["share-sim"]);
        let sim = simulate_share_panel(&mut r, &alpha, sigma, &totals, 20, 18);
        let fit = fit_share_model(&sim.panel, &quick(), 9).unwrap();
        let mut covered = 0;
        for &t in &sim.held_out {
            let m = &sim.panel.months[t];
            let d = predict_national(&mut r, &fit, m).unwrap();
            assert!(d.iter().all(|v| *v >= m.observed_sum()));
            let (lo, hi) = (stats::quantile(&d, 0.025), stats::quantile(&d, 0.975));
            covered += usize::from(lo <= sim.totals[t].round() && sim.totals[t].round() <= hi);
        }
        assert!(covered >= 5, "{covered}/6");
    }

    #[test]
    fn single_region_tail_is_extrapolated() {
        let (alpha, sigma, _) = reference_share_design();
        let totals = vec![1000.0; 24];
        let mut r = rng::stream(10, &["tail"]);
        let sim = simulate_share_panel(&mut r, &alpha, sigma, &totals, 0, 24);
        let fit = fit_share_model(&sim.panel, &quick(), 10).unwrap();
        let mut panel = sim.panel.clone();
        for m in panel.months.iter_mut() {
            m.year += 4;
            m.national = None;
        }
        for m in panel.months.iter_mut().skip(20) {
            for r in m.regions.iter_mut().skip(1) {
                *r = None;
            }
        }
        let expected = ExpectedDistribution {
            country: panel.country.clone(),
            months: vec![crate::gamma::GammaParams { mean: 1000.0, shape: 1e6 }; 24],
        };
        let est = estimate_national(&mut r, &fit, &panel, &expected, &default_ar1_config(), 10).unwrap();
        assert!(est.source[..20].iter().all(|s| *s == MonthSource::Share));
        assert!(est.source[20..].iter().all(|s| *s == MonthSource::Ar1Tail));
        assert!(est.deaths.iter().all(|d| d.len() == fit.len()));
        let m = stats::median(&est.deaths[23]);
        assert!((m / 1000.0 - 1.0).abs() < 0.3, "{m}");
    }

    #[test]
    fn constrained_simulation_design() {
        let mut r = rng::stream(11, &["china"]);
        let sim = simulate_constrained(&mut r);
        assert_eq!(sim.truth.len(), 12);
        assert!(sim.truth.iter().all(|y| (5000..=20000).contains(y)));
        assert!(sim.surveillance.iter().zip(&sim.truth).all(|(z, y)| z <= y));
        let config = ConstrainedConfig { iterations: 100_000, burn_in: 20_000, thin: 50, ..Default::default() };
        let out = constrained_count_mcmc(
            &mut r,
            sim.total(),
            &sim.anchors,
            Some(&SurveillanceData { counts: sim.surveillance.clone(), shares: ShareSource::Fixed(sim.shares.clone()) }),
            &even_start(sim.total(), 12),
            &config,
        )
        .unwrap();
        assert!((0.3..=0.6).contains(&out.acceptance_rate), "{}", out.acceptance_rate);
        let covered = (0..12)
            .filter(|&t| {
                let d = out.month(t);
                let y = sim.truth[t] as f64;
                stats::quantile(&d, 0.025) <= y && y <= stats::quantile(&d, 0.975)
            })
            .count();
        assert!(covered >= 10, "{covered}/12");
    }
}
