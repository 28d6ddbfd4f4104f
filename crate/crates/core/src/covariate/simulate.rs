//! Synthetic data generated from the covariate model itself.

use rand::Rng;

use super::sampler::ObservedCell;
use super::spec::{Layout, ModelSpec, TimeVaryingTerm};
use crate::data::{Covariate, CovariatePanel, Iso3, PandemicMonth, PANDEMIC_MONTHS};
use crate::stats;

#[derive(Clone, Debug, PartialEq)]
pub struct CovariateTruth {
    /// Full coefficient vector in the model's column layout.
    pub coefficients: Vec<f64>,
    pub sigma_eps: f64,
}

#[derive(Clone, Debug)]
pub struct SimulatedCovariateData {
    pub spec: ModelSpec,
    pub panel: CovariatePanel,
    pub cells: Vec<ObservedCell>,
    pub truth: CovariateTruth,
}

/// Settings for [`simulate_covariate_data`].
#[derive(Clone, Debug)]
pub struct SimulationSettings {
    pub countries: usize,
    pub constants: usize,
    pub time_varying: usize,
    pub sigma_eps: f64,
    /// Shape of the gamma expected-count distribution (known to the fit).
    pub tau: f64,
    pub expected_range: (f64, f64),
    /// Standard deviation of the true fixed effects (other than α).
    pub effect_sd: f64,
    pub path_amplitude: f64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            countries: 40,
            constants: 2,
            time_varying: 1,
            sigma_eps: 0.05,
            tau: 400.0,
            expected_range: (500.0, 5000.0),
            effect_sd: 0.1,
            path_amplitude: 0.05,
        }
    }
}

pub fn synthetic_country(i: usize) -> Iso3 {
    format!("S{:02}", i % 100).parse().expect("valid code")
}

pub fn simulate_covariate_data<R: Rng + ?Sized>(rng: &mut R, settings: &SimulationSettings) -> SimulatedCovariateData {
    let n = settings.countries;
    let countries: Vec<Iso3> = (0..n).map(synthetic_country).collect();
    let constant: Vec<Covariate> = (0..settings.constants)
        .map(|g| Covariate {
            name: format!("z{g}"),
            values: (0..n).map(|_| Some(stats::std_normal(rng))).collect(),
            imputed: vec![false; n],
            indicator: false,
            scaling: None,
        })
        .collect();
    let time_varying: Vec<Covariate> = (0..settings.time_varying)
        .map(|b| {
            let mut values = Vec::with_capacity(n * PANDEMIC_MONTHS);
            for _ in 0..n {
                let level = stats::std_normal(rng);
                let amp = rng.random_range(0.3..1.2);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                for t in 0..PANDEMIC_MONTHS {
                    let wave = (std::f64::consts::TAU * t as f64 / 12.0 + phase).sin();
                    values.push(Some(level + amp * wave));
                }
            }
            Covariate {
                name: format!("x{b}"),
                values,
                imputed: vec![false; n * PANDEMIC_MONTHS],
                indicator: false,
                scaling: None,
            }
        })
        .collect();
    let spec = ModelSpec {
        time_varying: time_varying.iter().map(|c| TimeVaryingTerm::main(&c.name)).collect(),
        constant: constant.iter().map(|c| c.name.clone()).collect(),
        ..ModelSpec::default()
    };
    let panel = CovariatePanel { countries: countries.clone(), time_varying, constant };

    let layout = Layout::of(&spec);
    let mut coefficients = vec![0.0; layout.len()];
    coefficients[0] = rng.random_range(-0.2..0.2);
    for c in coefficients.iter_mut().take(layout.fixed()).skip(1) {
        *c = settings.effect_sd * stats::std_normal(rng);
    }
    for b in 0..layout.terms {
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let path: Vec<f64> = (0..PANDEMIC_MONTHS)
            .map(|t| settings.path_amplitude * (std::f64::consts::TAU * t as f64 / 24.0 + phase).sin())
            .collect();
        let mean = stats::mean(&path);
        for (t, v) in path.iter().enumerate() {
            coefficients[layout.path(b, t)] = v - mean;
        }
    }

    let mut cells = Vec::with_capacity(n * PANDEMIC_MONTHS);
    for c in &countries {
        let e_level = rng.random_range(settings.expected_range.0..settings.expected_range.1);
        for t in PandemicMonth::all() {
            let row = spec.design_row(&panel, c, t).expect("complete synthetic panel");
            let eta = row.dot(&coefficients) + stats::normal(rng, 0.0, settings.sigma_eps);
            let e_hat = e_level * (1.0 + 0.1 * (std::f64::consts::TAU * t.month() as f64 / 12.0).cos());
            let y = stats::negbin(rng, e_hat * eta.exp(), settings.tau) as f64;
            cells.push(ObservedCell { country: c.clone(), t, y, e_hat, tau: settings.tau });
        }
    }
    SimulatedCovariateData {
        spec,
        panel,
        cells,
        truth: CovariateTruth { coefficients, sigma_eps: settings.sigma_eps },
    }
}
