//! A synthetic 30-country world covering every data tier, generated from the
//! full model: temperature-driven seasonal baselines, the covariate model
//! for pandemic deaths, region shares for subnational data and a
//! surveillance subsystem for the annual-total country.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::config::RunConfig;
use crate::covariate::{synthetic_country, Layout, ModelSpec, TimeVaryingTerm};
use crate::data::{
    ingest_covariates, ingest_population, standardize_covariates, write_mortality, Granularity, HistoricSeries,
    IncomeGroup, Iso3, MortalityData, MortalitySeries, PandemicMonth, WhoRegion, PANDEMIC_MONTHS,
};
use crate::error::Result;
use crate::rng;
use crate::stats;

/// How a synthetic country reports pandemic deaths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Full,
    /// Monthly national data for the first `n` months.
    Partial(usize),
    /// Annual history and annual pandemic totals only.
    Annual,
    /// Several regions, all pandemic months.
    Regions,
    /// Several regions, with only the first reporting in the last months.
    RegionsWithTail,
    /// Annual pandemic totals plus one surveillance region.
    Surveillance,
    NoData,
}

pub const WORLD_COUNTRIES: usize = 30;
const HISTORY_YEARS: std::ops::RangeInclusive<i32> = 2015..=2019;
const ANNUAL_HISTORY_YEARS: std::ops::RangeInclusive<i32> = 2005..=2019;
const TEMPERATURE_BETA: f64 = -0.03;
const HISTORIC_SIZE: f64 = 3000.0;
const REGION_EFFECT_SD: f64 = 0.2;
const REGION_ALPHA: [f64; 3] = [-0.9, -1.2, -0.4];
const SURVEILLANCE_ALPHA: f64 = -1.4;
const TAIL_START: usize = 19;

pub fn role(i: usize) -> Role {
    match i {
        0..=11 => Role::Full,
        12..=16 => Role::Partial(10 + 3 * (i - 12)),
        17..=19 => Role::Annual,
        20 => Role::Regions,
        21 => Role::RegionsWithTail,
        22 => Role::Surveillance,
        _ => Role::NoData,
    }
}

pub fn world_spec() -> ModelSpec {
    ModelSpec {
        time_varying: vec![TimeVaryingTerm::main("sqrt_covid_death_rate"), TimeVaryingTerm::main("test_positivity")],
        constant: vec!["diabetes_rate".into(), "high_income".into()],
        ..ModelSpec::default()
    }
}

/// Run configuration for the synthetic world.
pub fn world_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.run.seed = seed;
    c.run.data_dir = ".".into();
    c.covariate.model = world_spec();
    c
}

#[derive(Clone, Debug)]
pub struct WorldTruth {
    pub roles: BTreeMap<Iso3, Role>,
    pub spec: ModelSpec,
    pub coefficients: Vec<f64>,
    pub sigma_eps: f64,
    /// True monthly pandemic deaths and baseline means.
    pub deaths: BTreeMap<Iso3, Vec<f64>>,
    pub expected: BTreeMap<Iso3, Vec<f64>>,
}

struct Country {
    code: Iso3,
    role: Role,
    region: WhoRegion,
    income: IncomeGroup,
    population: f64,
    level: f64,
    slope: f64,
    temperature: BTreeMap<(i32, u32), f64>,
}

impl Country {
    fn month_shares(&self, year: i32) -> [f64; 12] {
        let z: Vec<f64> = (1..=12).map(|m| TEMPERATURE_BETA * self.temperature[&(year, m)]).collect();
        let p = stats::softmax(&z);
        std::array::from_fn(|m| p[m])
    }

    fn baseline(&self, year: i32, month: u32) -> f64 {
        let annual = (self.level + self.slope * (year - 2015) as f64).exp();
        annual * self.month_shares(year)[month as usize - 1]
    }
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(dir.join(name))?)
}

fn make_countries<R: Rng>(r: &mut R) -> Vec<Country> {
    (0..WORLD_COUNTRIES)
        .map(|i| {
            let population = (r.random_range(14.5..17.5f64)).exp();
            let mean_temp = r.random_range(0.0..25.0);
            let amplitude = r.random_range(2.0..12.0);
            let phase = if r.random_bool(0.3) { std::f64::consts::PI } else { 0.0 };
            let mut temperature = BTreeMap::new();
            for year in *ANNUAL_HISTORY_YEARS.start()..=2021 {
                for m in 1..=12u32 {
                    let wave = (std::f64::consts::TAU * (m as f64 - 1.0) / 12.0 + phase).cos();
                    temperature.insert((year, m), mean_temp - amplitude * wave + stats::normal(r, 0.0, 0.3));
                }
            }
            Country {
                code: synthetic_country(i),
                role: role(i),
                region: WhoRegion::ALL[i % 6],
                income: if i % 3 == 0 { IncomeGroup::High } else { IncomeGroup::LowMiddle },
                population,
                level: (population * r.random_range(0.006..0.011)).ln(),
                slope: r.random_range(-0.01..0.02),
                temperature,
            }
        })
        .collect()
}

fn write_static_inputs<R: Rng>(r: &mut R, dir: &Path, countries: &[Country]) -> Result<()> {
    let mut w = csv_writer(dir, "region.csv")?;
    w.write_record(["iso3", "who_region", "income_group"])?;
    for c in countries {
        w.write_record([c.code.as_str(), c.region.code(), c.income.code()])?;
    }
    w.flush()?;

    let mut w = csv_writer(dir, "population.csv")?;
    w.write_record(["iso3", "year", "population"])?;
    for c in countries {
        for (k, year) in (2019..=2022).enumerate() {
            let pop = (c.population * (1.0 + 0.01 * k as f64)).round();
            w.write_record([c.code.as_str(), &year.to_string(), &pop.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(dir, "temperature.csv")?;
    w.write_record(["iso3", "year", "month", "temp_c"])?;
    for c in countries {
        for ((year, m), v) in &c.temperature {
            w.write_record([c.code.as_str(), &year.to_string(), &m.to_string(), &format!("{v:.3}")])?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(dir, "covariates.csv")?;
    w.write_record(["iso3", "year", "month", "name", "value"])?;
    for (i, c) in countries.iter().enumerate() {
        let level = r.random_range(0.0..2.0);
        let positivity = r.random_range(0.02..0.2);
        let phase = r.random_range(0.0..std::f64::consts::TAU);
        for t in PandemicMonth::all() {
            let wave = 1.0 + (std::f64::consts::TAU * t.offset() as f64 / 10.0 + phase).sin();
            let rate = (level * wave * t.offset().min(3) as f64 / 3.0).max(0.0);
            let pos = positivity * (0.5 + 0.5 * wave);
            let (year, month) = (t.calendar_year().to_string(), t.month().to_string());
            // A few missing cells exercise the regional-median fill.
            let missing = i == 5 && t.index() <= 2;
            let rate = if missing { String::new() } else { format!("{rate:.5}") };
            w.write_record([c.code.as_str(), &year, &month, "sqrt_covid_death_rate", &rate])?;
            w.write_record([c.code.as_str(), &year, &month, "test_positivity", &format!("{pos:.5}")])?;
        }
        let diabetes = stats::normal(r, 8.0, 2.0);
        w.write_record([c.code.as_str(), "", "", "diabetes_rate", &format!("{diabetes:.4}")])?;
        w.write_record([c.code.as_str(), "", "", "high_income", &c.income.indicator().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn observed_months(role: Role) -> usize {
    match role {
        Role::Full => PANDEMIC_MONTHS,
        Role::Partial(n) => n,
        _ => 0,
    }
}

fn region_counts<R: Rng>(r: &mut R, total: f64, alpha: &[f64]) -> Vec<f64> {
    let e = stats::normal(r, 0.0, REGION_EFFECT_SD);
    let mut logits: Vec<f64> = alpha.iter().map(|a| a + e).collect();
    logits.push(0.0);
    let counts = stats::multinomial(r, total.round() as u64, &stats::softmax(&logits));
    counts[..alpha.len()].iter().map(|c| *c as f64).collect()
}

/// Write every input CSV and `run.toml` into `dir`; returns the truth.
pub fn write_world(dir: &Path, seed: u64) -> Result<WorldTruth> {
    std::fs::create_dir_all(dir)?;
    let mut r = rng::stream(seed, &["synth"]);
    let countries = make_countries(&mut r);
    write_static_inputs(&mut r, dir, &countries)?;

    let population = ingest_population(&dir.join("region.csv"), &dir.join("population.csv"))?;
    let raw = ingest_covariates(&dir.join("covariates.csv"))?;
    let roles: BTreeMap<Iso3, Role> = countries.iter().map(|c| (c.code.clone(), c.role)).collect();
    let panel = standardize_covariates(&raw, &population, |c, t| t.index() <= observed_months(roles[c]))?;

    let spec = world_spec();
    spec.validate(&panel)?;
    let layout = Layout::of(&spec);
    let mut coefficients = vec![0.0; layout.len()];
    coefficients[..layout.fixed()].copy_from_slice(&[0.08, 0.03, -0.04, 0.06, 0.03]);
    for b in 0..layout.terms {
        let phase = r.random_range(0.0..std::f64::consts::TAU);
        let path: Vec<f64> = (0..PANDEMIC_MONTHS).map(|t| 0.03 * (std::f64::consts::TAU * t as f64 / 24.0 + phase).sin()).collect();
        let mean = stats::mean(&path);
        for (t, v) in path.iter().enumerate() {
            coefficients[layout.path(b, t)] = v - mean;
        }
    }
    let sigma_eps = 0.05;

    let mut truth = WorldTruth {
        roles: roles.clone(),
        spec: spec.clone(),
        coefficients: coefficients.clone(),
        sigma_eps,
        deaths: BTreeMap::new(),
        expected: BTreeMap::new(),
    };
    let mut mortality = MortalityData::default();
    let mut subnational: Vec<(String, String, i32, Option<u32>, Option<f64>)> = Vec::new();
    let mut reported = Vec::new();

    for c in &countries {
        let annual_history = c.role == Role::Annual;
        let mut history = HistoricSeries {
            country: c.code.clone(),
            granularity: if annual_history { Granularity::Annual } else { Granularity::Monthly },
            monthly: BTreeMap::new(),
            annual: BTreeMap::new(),
        };
        let years = if annual_history { ANNUAL_HISTORY_YEARS } else { HISTORY_YEARS };
        for year in years {
            let mut total = 0.0;
            for m in 1..=12 {
                let d = stats::negbin(&mut r, c.baseline(year, m), HISTORIC_SIZE) as f64;
                total += d;
                if !annual_history {
                    history.monthly.insert((year, m), d);
                }
            }
            if annual_history {
                history.annual.insert(year, total);
            }
        }

        let mut expected = Vec::with_capacity(PANDEMIC_MONTHS);
        let mut deaths = Vec::with_capacity(PANDEMIC_MONTHS);
        for t in PandemicMonth::all() {
            let e = c.baseline(t.calendar_year(), t.month());
            let eta = spec.design_row(&panel, &c.code, t)?.dot(&coefficients) + stats::normal(&mut r, 0.0, sigma_eps);
            expected.push(e);
            deaths.push(stats::poisson(&mut r, e * eta.exp()) as f64);
        }

        let mut series = MortalitySeries::no_data(c.code.clone());
        let n_obs = observed_months(c.role);
        for t in 0..n_obs {
            series.counts[t] = Some(deaths[t]);
        }
        if matches!(c.role, Role::Annual | Role::Surveillance) {
            series.annual_totals = [Some(deaths[..12].iter().sum()), Some(deaths[12..].iter().sum())];
        }
        series.tier = series.infer_tier();

        let alpha: Option<&[f64]> = match c.role {
            Role::Regions | Role::RegionsWithTail => Some(&REGION_ALPHA),
            Role::Surveillance => Some(std::slice::from_ref(&SURVEILLANCE_ALPHA)),
            _ => None,
        };
        if let Some(alpha) = alpha {
            let mut push = |region: usize, year: i32, month: u32, v: Option<f64>| {
                let id = if alpha.len() == 1 { "DSP".to_string() } else { format!("R{}", region + 1) };
                subnational.push((c.code.as_str().to_string(), id, year, Some(month), v));
            };
            for (&(year, m), &d) in &history.monthly {
                for (k, v) in region_counts(&mut r, d, alpha).into_iter().enumerate() {
                    push(k, year, m, Some(v));
                }
            }
            for t in PandemicMonth::all() {
                for (k, v) in region_counts(&mut r, deaths[t.offset()], alpha).into_iter().enumerate() {
                    let dropped = c.role == Role::RegionsWithTail && t.offset() >= TAIL_START && k > 0;
                    push(k, t.calendar_year(), t.month(), (!dropped).then_some(v));
                }
            }
        }

        for t in PandemicMonth::all() {
            let excess = deaths[t.offset()] - expected[t.offset()];
            let rep = (0.5 * excess.max(0.0)).round();
            reported.push((c.code.clone(), t, rep));
        }

        mortality.historic.insert(c.code.clone(), history);
        mortality.pandemic.insert(c.code.clone(), series);
        truth.deaths.insert(c.code.clone(), deaths);
        truth.expected.insert(c.code.clone(), expected);
    }

    let mut f = std::fs::File::create(dir.join("mortality.csv"))?;
    write_mortality(&mortality, &mut f)?;
    f.flush()?;

    let mut w = csv_writer(dir, "subnational.csv")?;
    w.write_record(["iso3", "region_id", "year", "month", "deaths"])?;
    for (c, id, year, month, v) in &subnational {
        let month = month.map(|m| m.to_string()).unwrap_or_default();
        let v = v.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([c.as_str(), id, &year.to_string(), &month, &v])?;
    }
    w.flush()?;

    let mut w = csv_writer(dir, "covid_reported.csv")?;
    w.write_record(["iso3", "year", "month", "deaths"])?;
    for (c, t, v) in &reported {
        w.write_record([c.as_str(), &t.calendar_year().to_string(), &t.month().to_string(), &v.to_string()])?;
    }
    w.flush()?;

    std::fs::write(dir.join("run.toml"), world_config(seed).to_toml())?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ingest_mortality, ingest_subnational, Tier};

    #[test]
    fn world_spans_every_tier_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let truth = write_world(dir.path(), 5).unwrap();
        let data = ingest_mortality(&dir.path().join("mortality.csv")).unwrap();
        let mut tiers = BTreeMap::new();
        for (c, role) in &truth.roles {
            let tier = data.series(c).tier;
            *tiers.entry(tier.label()).or_insert(0) += 1;
            match role {
                Role::Full => assert_eq!(tier, Tier::FullNational),
                Role::Partial(n) => assert_eq!(tier, Tier::PartialNational { observed: *n }),
                Role::Annual | Role::Surveillance => assert_eq!(tier, Tier::SubnationalOrAnnual),
                Role::NoData | Role::Regions | Role::RegionsWithTail => assert_eq!(tier, Tier::NoData),
            }
        }
        assert_eq!(tiers.len(), 4);
        let rows = ingest_subnational(&dir.path().join("subnational.csv")).unwrap();
        assert!(rows.iter().any(|r| r.region_id == "DSP"));
        assert!(RunConfig::load(&dir.path().join("run.toml")).is_ok());
        let again = tempfile::tempdir().unwrap();
        write_world(again.path(), 5).unwrap();
        for f in ["mortality.csv", "covariates.csv", "subnational.csv"] {
            assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap());
        }
    }
}
