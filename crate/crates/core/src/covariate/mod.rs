//! Hierarchical negative binomial model relating mortality to covariates,
//! and its predictions for countries lacking complete national data.

mod predict;
mod sampler;
mod simulate;
mod spec;

pub use predict::{
    apportion_annual_country, benchmark_factor, benchmark_partial, expected_draws, fitted_means, observed_national, posterior_predictive_check, predict_cell,
    predict_no_data, CountryDraws, PredictiveCheck,
};
pub use crate::mcmc::McmcConfig;
pub use sampler::{fit_cells, fit_model, observed_cells, ObservedCell, PosteriorDraws};
pub use simulate::{simulate_covariate_data, synthetic_country, CovariateTruth, SimulatedCovariateData, SimulationSettings};
pub use spec::{DesignRow, Layout, ModelSpec, PcPrior, TimeVaryingTerm};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MortalitySeries, PandemicMonth, Tier};
    use crate::gamma::{ExpectedDistribution, GammaParams};
    use crate::mcmc::DiagnosticsTable;
    use crate::rng;
    use crate::stats;

    fn quick() -> McmcConfig {
        McmcConfig { warmup: 1500, draws: 3000, keep: 400, ..McmcConfig::default() }
    }

    fn fitted(seed: u64, settings: &SimulationSettings) -> (SimulatedCovariateData, PosteriorDraws) {
        let mut r = rng::stream(seed, &["sim"]);
        let data = simulate_covariate_data(&mut r, settings);
        let draws = fit_cells(data.cells.clone(), &data.panel, &data.spec, &quick(), seed).unwrap();
        (data, draws)
    }

    #[test]
    fn recovers_effects_and_keeps_paths_centered() {
        let (data, draws) = fitted(21, &SimulationSettings::default());
        let l = draws.layout();
        for j in 0..l.fixed() {
            let d = draws.fixed_effect(j);
            let z = (stats::mean(&d) - data.truth.coefficients[j]) / stats::sample_sd(&d);
            assert!(z.abs() < 4.0, "column {j}: z = {z}");
        }
        for s in 0..draws.len() {
            for b in 0..l.terms {
                assert!(draws.path(s, b).iter().sum::<f64>().abs() < 1e-8);
            }
            assert!(draws.sigma_eps[s] > 0.0 && draws.sigma_beta[s].iter().all(|v| *v > 0.0));
        }
        assert!(draws.diagnostics.passed());
    }

    #[test]
    fn null_effect_concentrates_near_zero() {
        let settings = SimulationSettings { constants: 1, effect_sd: 0.0, ..SimulationSettings::default() };
        let (_, draws) = fitted(5, &settings);
        let d = draws.fixed_effect(1);
        assert!(stats::mean(&d).abs() < 2.0 * stats::sample_sd(&d));
    }

    #[test]
    fn in_sample_predictions_reproduce_observations() {
        // Overdispersion effects dominate count noise, so the fitted effects
        // absorb nearly all of each residual.
        let settings = SimulationSettings {
            countries: 12,
            sigma_eps: 0.3,
            tau: 1e4,
            expected_range: (5000.0, 20000.0),
            ..SimulationSettings::default()
        };
        let (data, draws) = fitted(8, &settings);
        let mut r = rng::stream(8, &["ppc"]);
        let checks = posterior_predictive_check(&mut r, &draws, &data.panel).unwrap();
        let within = checks.iter().filter(|c| (c.mean - c.observed).abs() <= 3.0 * c.mcse).count();
        assert!(within as f64 >= 0.95 * checks.len() as f64, "{within}/{}", checks.len());
    }

    #[test]
    fn too_few_countries_is_a_precondition_error() {
        let mut r = rng::stream(1, &["sim"]);
        let data = simulate_covariate_data(&mut r, &SimulationSettings { countries: 1, ..Default::default() });
        let err = fit_cells(data.cells, &data.panel, &data.spec, &quick(), 1).unwrap_err();
        assert!(matches!(err, crate::Error::Precondition(_)));
    }

    #[test]
    fn failed_diagnostics_carry_the_table() {
        let mut r = rng::stream(2, &["sim"]);
        let data = simulate_covariate_data(&mut r, &SimulationSettings { countries: 6, ..Default::default() });
        let cfg = McmcConfig { warmup: 5, draws: 20, keep: 10, ..McmcConfig::default() };
        match fit_cells(data.cells, &data.panel, &data.spec, &cfg, 2) {
            Err(crate::Error::Diagnostics(t)) => assert!(!t.passed() && !t.rows.is_empty()),
            other => panic!("expected diagnostics failure, got {other:?}"),
        }
    }

    /// Hand-built posterior with θ = 1 everywhere.
    fn identity_draws(data: &SimulatedCovariateData, n: usize, sigma_eps: f64) -> PosteriorDraws {
        let l = Layout::of(&data.spec);
        PosteriorDraws {
            spec: data.spec.clone(),
            cells: vec![],
            coefficients: vec![vec![0.0; l.len()]; n],
            sigma_eps: vec![sigma_eps; n],
            sigma_beta: vec![vec![0.1; l.terms]; n],
            eps: vec![vec![]; n],
            diagnostics: DiagnosticsTable::new(1.02, 400.0),
        }
    }

    fn flat_expected(c: &crate::data::Iso3, mean: f64, shape: f64) -> ExpectedDistribution {
        ExpectedDistribution { country: c.clone(), months: vec![GammaParams { mean, shape }; 24] }
    }

    #[test]
    fn identity_prediction_has_mean_expected_and_scales() {
        let mut r = rng::stream(3, &["sim"]);
        let data = simulate_covariate_data(&mut r, &SimulationSettings { countries: 3, ..Default::default() });
        let c = data.panel.countries[0].clone();
        let draws = identity_draws(&data, 20_000, 0.0);
        let p = predict_no_data(&mut r, &draws, &flat_expected(&c, 500.0, crate::gamma::TAU_MAX), &data.panel, &c)
            .unwrap();
        for t in 0..24 {
            let m = stats::mean(&p.deaths[t]);
            let mcse = stats::sample_sd(&p.deaths[t]) / (p.draws() as f64).sqrt();
            assert!((m - 500.0).abs() < 4.0 * mcse, "t={t} mean={m}");
        }
        let draws = identity_draws(&data, 20_000, 0.1);
        let a = predict_no_data(&mut r, &draws, &flat_expected(&c, 300.0, 50.0), &data.panel, &c).unwrap();
        let b = predict_no_data(&mut r, &draws, &flat_expected(&c, 600.0, 50.0), &data.panel, &c).unwrap();
        for t in 0..24 {
            let (ma, mb) = (stats::mean(&a.deaths[t]), stats::mean(&b.deaths[t]));
            assert!((mb / ma - 2.0).abs() < 0.03, "t={t}");
            assert!(stats::sample_variance(&a.deaths[t]) >= ma);
        }
    }

    #[test]
    fn benchmark_factor_arithmetic_and_identity() {
        assert!((benchmark_factor(1000.0, 800.0, 1.1) - 1000.0 / 880.0).abs() < 1e-12);
        assert!((benchmark_factor(1000.0, 800.0, 1.1) - 1.13636).abs() < 1e-5);

        let mut r = rng::stream(4, &["sim"]);
        let data = simulate_covariate_data(&mut r, &SimulationSettings { countries: 3, ..Default::default() });
        let c = data.panel.countries[1].clone();
        let draws = identity_draws(&data, 4000, 0.0);
        let e = flat_expected(&c, 800.0, crate::gamma::TAU_MAX);
        let mut series = MortalitySeries::no_data(c.clone());
        for t in 0..6 {
            series.counts[t] = Some(800.0);
        }
        series.tier = Tier::PartialNational { observed: 6 };
        let (out, f) = benchmark_partial(&mut r, &draws, &series, &e, &data.panel).unwrap();
        assert!(f.unwrap().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(out.deaths[..6].iter().all(|d| d.iter().all(|v| *v == 800.0)));
        let m = stats::mean(&out.deaths[10]);
        assert!((m - 800.0).abs() < 4.0 * (800.0f64 / 4000.0).sqrt());

        series.counts[5] = Some(1200.0);
        let (out, f) = benchmark_partial(&mut r, &draws, &series, &e, &data.panel).unwrap();
        let f = f.unwrap();
        // Benchmarked mean at the last observed month reproduces y exactly.
        assert!(f.iter().all(|v| (800.0 * v - 1200.0).abs() < 1e-9));
        assert!((stats::mean(&out.deaths[6]) / 1200.0 - 1.0).abs() < 0.01);

        series.counts[5] = Some(0.0);
        let (_, f) = benchmark_partial(&mut r, &draws, &series, &e, &data.panel).unwrap();
        assert!(f.is_none());
    }

    #[test]
    fn annual_apportionment() {
        let mut r = rng::stream(6, &["sim"]);
        let data = simulate_covariate_data(&mut r, &SimulationSettings { countries: 3, ..Default::default() });
        let c = data.panel.countries[2].clone();
        let draws = identity_draws(&data, 20_000, 0.0);
        let e = flat_expected(&c, 100.0, 1e6);
        let out = apportion_annual_country(&mut r, &draws, &[Some(1200.0), Some(0.0)], &e, &data.panel, &c).unwrap();
        for s in 0..out.draws() {
            let y1: f64 = (0..12).map(|m| out.deaths[m][s]).sum();
            let y2: f64 = (12..24).map(|m| out.deaths[m][s]).sum();
            assert_eq!(y1, 1200.0);
            assert_eq!(y2, 0.0);
        }
        for m in 0..12 {
            assert!((stats::mean(&out.deaths[m]) / 100.0 - 1.0).abs() < 0.02);
        }
        let mut e2 = e.clone();
        e2.months[3].mean = 200.0;
        let out = apportion_annual_country(&mut r, &draws, &[Some(1300.0), Some(13.0)], &e2, &data.panel, &c).unwrap();
        let share = stats::mean(&out.deaths[3]) / 1300.0;
        assert!((share - 2.0 / 13.0).abs() < 0.003, "{share}");
        assert!(matches!(
            apportion_annual_country(&mut r, &draws, &[Some(-1.0), None], &e, &data.panel, &c),
            Err(crate::Error::Validation(_))
        ));
    }

    #[test]
    fn missing_expected_distribution_is_a_precondition_error() {
        let c: crate::data::Iso3 = "AAA".parse().unwrap();
        let mut s = MortalitySeries::no_data(c);
        s.counts[0] = Some(10.0);
        let err = observed_cells(&[s], &Default::default()).unwrap_err();
        assert!(matches!(err, crate::Error::Precondition(_)));
        let _ = PandemicMonth::new(1);
    }
}
