//! End-to-end estimation run: load inputs, fit each stage (with a content-
//! addressed cache), route every country to a prediction method and write
//! the run directory.

mod cache;
mod route;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::{StageCache, StageRecord};
pub use route::{predict_country, route, CountryContext, Route};

use crate::config::RunConfig;
use crate::covariate::{fit_cells, observed_cells, CountryDraws, PosteriorDraws};
use crate::data::{
    ingest_covariates, ingest_mortality, ingest_population, ingest_reported, ingest_subnational,
    ingest_temperature, standardize_covariates, CovariatePanel, Granularity, InputPaths, Iso3, MortalityData,
    PandemicMonth, PopulationTable, ReportedCovidDeaths, SubnationalRow, TemperatureTable, Tier,
};
use crate::digest;
use crate::draws_io::DrawsFile;
use crate::error::{Error, Result};
use crate::excess::{
    compute_excess, excess_rate, indicators, rank_countries, summarize, write_indicators_csv, write_rank_csv,
    write_summary_csv, CountryExcess, ExcessDraws, PointEstimate, Summary, RATE_CONVENTION,
};
use crate::expected::{fit_annual_expected, fit_monthly_expected, ExpectedFit, TrendKind};
use crate::gamma::{expected_from_annual_fit, expected_from_monthly_fit, ExpectedDistribution};
use crate::rng;
use crate::seasonal::{fit_temperature_model, TemperatureModel};
use crate::validation::{run_cv, CvInput, CvReport, CvScheme};

const ABSENT: &str = "absent";

/// Parsed input tables with a digest of every file.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub countries: Vec<Iso3>,
    pub mortality: MortalityData,
    pub covariates: CovariatePanel,
    pub population: PopulationTable,
    pub reported: ReportedCovidDeaths,
    pub temperature: Option<TemperatureTable>,
    pub subnational: Vec<SubnationalRow>,
    /// File name to SHA-256, or "absent" for optional files not supplied.
    pub hashes: BTreeMap<String, String>,
}

fn optional<T>(path: &Path, read: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        read(path).map(Some)
    } else {
        Ok(None)
    }
}

impl Inputs {
    pub fn load(dir: &Path) -> Result<Self> {
        let paths = InputPaths::in_dir(dir);
        let mut hashes = BTreeMap::new();
        for p in [
            &paths.mortality,
            &paths.covariates,
            &paths.population,
            &paths.region,
            &paths.subnational,
            &paths.covid_reported,
            &paths.temperature,
        ] {
            let name = p.file_name().expect("file name").to_string_lossy().into_owned();
            let hash = if p.exists() { digest::file_sha256(p)? } else { ABSENT.to_string() };
            hashes.insert(name, hash);
        }
        for p in [&paths.mortality, &paths.covariates, &paths.population, &paths.region] {
            if !p.exists() {
                return Err(Error::Validation(format!("required input {} not found", p.display())));
            }
        }
        let population = ingest_population(&paths.region, &paths.population)?;
        let countries: Vec<Iso3> = population.countries.keys().cloned().collect();
        let mut mortality = ingest_mortality(&paths.mortality)?;
        if let Some(c) = mortality.pandemic.keys().chain(mortality.historic.keys()).find(|c| !population.countries.contains_key(*c)) {
            return Err(Error::Validation(format!("{c} has mortality data but is not listed in region.csv")));
        }
        mortality.include_countries(&countries);
        Ok(Self {
            countries,
            mortality,
            covariates: ingest_covariates(&paths.covariates)?,
            population,
            reported: optional(&paths.covid_reported, ingest_reported)?.unwrap_or_default(),
            temperature: optional(&paths.temperature, ingest_temperature)?,
            subnational: optional(&paths.subnational, ingest_subnational)?.unwrap_or_default(),
            hashes,
        })
    }

    fn hash(&self, file: &str) -> String {
        format!("{file}={}", self.hashes.get(file).map_or(ABSENT, String::as_str))
    }

    pub fn has_subnational(&self, c: &Iso3) -> bool {
        self.subnational.iter().any(|r| &r.country == c)
    }

    /// Tier and prediction route for every country.
    pub fn routing(&self) -> BTreeMap<Iso3, (Tier, Route)> {
        self.countries
            .iter()
            .map(|c| (c.clone(), route(&self.mortality.series(c), self.has_subnational(c))))
            .collect()
    }
}

fn section<T: Serialize>(name: &str, value: &T) -> String {
    format!("{name}={}", serde_json::to_string(value).expect("config serializes"))
}

fn in_stage<T>(stage: &str, country: Option<&Iso3>, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::stage(stage, country.map(Iso3::as_str), e),
    })
}

pub fn fit_expected(config: &RunConfig, inputs: &Inputs) -> Result<BTreeMap<Iso3, ExpectedFit>> {
    let trend = config.expected.trend.unwrap_or(TrendKind::Spline);
    inputs
        .countries
        .par_iter()
        .map(|c| {
            let h = inputs.mortality.historic.get(c).ok_or_else(|| {
                Error::stage("expected", Some(c.as_str()), Error::Precondition("no pre-pandemic history".into()))
            })?;
            let fit = match h.granularity {
                Granularity::Monthly => fit_monthly_expected(h, trend),
                Granularity::Annual => fit_annual_expected(h),
            };
            Ok((c.clone(), in_stage("expected", Some(c), fit)?))
        })
        .collect()
}

/// The temperature model, fitted only when some country has annual history.
pub fn fit_seasonal(inputs: &Inputs) -> Result<Option<TemperatureModel>> {
    let annual = inputs.mortality.historic.values().any(|h| h.granularity == Granularity::Annual);
    if !annual {
        return Ok(None);
    }
    let temps = inputs.temperature.as_ref().ok_or_else(|| {
        Error::stage("seasonal", None, Error::Precondition("annual-only histories need temperature.csv".into()))
    })?;
    let monthly: Vec<_> =
        inputs.mortality.historic.values().filter(|h| h.granularity == Granularity::Monthly).cloned().collect();
    in_stage("seasonal", None, fit_temperature_model(&monthly, temps).map(Some))
}

pub fn fit_gamma(
    config: &RunConfig,
    inputs: &Inputs,
    expected: &BTreeMap<Iso3, ExpectedFit>,
    seasonal: Option<&TemperatureModel>,
) -> Result<BTreeMap<Iso3, ExpectedDistribution>> {
    let seed = rng::child_seed(config.run.seed, &["gamma"]);
    let s = config.gamma.samples;
    expected
        .par_iter()
        .map(|(c, fit)| {
            let dist = match inputs.mortality.historic[c].granularity {
                Granularity::Monthly => expected_from_monthly_fit(fit, seed, s),
                Granularity::Annual => {
                    let model = seasonal.expect("seasonal model fitted for annual histories");
                    let temps = inputs.temperature.as_ref().expect("temperature present");
                    expected_from_annual_fit(fit, model, temps, seed, s)
                }
            };
            Ok((c.clone(), in_stage("gamma", Some(c), dist)?))
        })
        .collect()
}

/// Standardized covariate panel and the posterior of the count model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateStage {
    pub panel: CovariatePanel,
    pub draws: PosteriorDraws,
}

pub fn fit_covariate(
    config: &RunConfig,
    inputs: &Inputs,
    gamma: &BTreeMap<Iso3, ExpectedDistribution>,
) -> Result<CovariateStage> {
    let mortality = &inputs.mortality;
    let raw = inputs.covariates.with_countries(&inputs.countries);
    let panel = in_stage(
        "covariate",
        None,
        standardize_covariates(&raw, &inputs.population, |c, t| mortality.series(c).observed(t).is_some()),
    )?;
    let series: Vec<_> = mortality.pandemic.values().cloned().collect();
    let cells = in_stage("covariate", None, observed_cells(&series, gamma))?;
    let seed = rng::child_seed(config.run.seed, &["covariate"]);
    let draws = in_stage(
        "covariate",
        None,
        fit_cells(cells, &panel, &config.covariate.model, &config.covariate.mcmc, seed),
    )?;
    Ok(CovariateStage { panel, draws })
}

/// Draws for one country along its route.
pub fn predict_for(
    config: &RunConfig,
    inputs: &Inputs,
    gamma: &BTreeMap<Iso3, ExpectedDistribution>,
    covariate: &CovariateStage,
    c: &Iso3,
) -> Result<CountryDraws> {
    let series = inputs.mortality.series(c);
    let subnational: Vec<SubnationalRow> = inputs.subnational.iter().filter(|r| &r.country == c).cloned().collect();
    let expected = gamma
        .get(c)
        .ok_or_else(|| Error::stage("predict", Some(c.as_str()), Error::Validation("unknown country".into())))?;
    let ctx = CountryContext {
        series: &series,
        history: inputs.mortality.historic.get(c),
        subnational: &subnational,
        expected,
        covariate: &covariate.draws,
        panel: &covariate.panel,
        config: &config.subnational,
        seed: config.run.seed,
    };
    let (_, r) = route(&series, !subnational.is_empty());
    in_stage("predict", Some(c), predict_country(&ctx, r))
}

pub fn predict_all(
    config: &RunConfig,
    inputs: &Inputs,
    gamma: &BTreeMap<Iso3, ExpectedDistribution>,
    covariate: &CovariateStage,
) -> Result<BTreeMap<Iso3, CountryDraws>> {
    inputs
        .countries
        .par_iter()
        .map(|c| Ok((c.clone(), predict_for(config, inputs, gamma, covariate, c)?)))
        .collect()
}

/// Results of every fitted stage up to the covariate model.
pub struct Fitted {
    pub expected: BTreeMap<Iso3, ExpectedFit>,
    pub seasonal: Option<TemperatureModel>,
    pub gamma: BTreeMap<Iso3, ExpectedDistribution>,
    pub covariate: CovariateStage,
    pub keys: BTreeMap<String, String>,
}

/// Run the fitted stages through `cache`.
pub fn fit_stages(config: &RunConfig, inputs: &Inputs, cache: &mut StageCache) -> Result<Fitted> {
    let (expected, k_expected) = cache.run(
        "expected",
        &[inputs.hash("mortality.csv"), inputs.hash("region.csv"), section("expected", &config.expected)],
        || fit_expected(config, inputs),
    )?;
    let (seasonal, k_seasonal) = cache.run(
        "seasonal",
        &[inputs.hash("mortality.csv"), inputs.hash("temperature.csv")],
        || fit_seasonal(inputs),
    )?;
    let (gamma, k_gamma) = cache.run(
        "gamma",
        &[
            k_expected.clone(),
            k_seasonal.clone(),
            inputs.hash("temperature.csv"),
            section("gamma", &config.gamma),
            format!("seed={}", config.run.seed),
        ],
        || fit_gamma(config, inputs, &expected, seasonal.as_ref()),
    )?;
    let (covariate, k_covariate) = cache.run(
        "covariate",
        &[
            k_gamma.clone(),
            inputs.hash("mortality.csv"),
            inputs.hash("covariates.csv"),
            inputs.hash("population.csv"),
            inputs.hash("region.csv"),
            section("covariate", &config.covariate),
            format!("seed={}", config.run.seed),
        ],
        || fit_covariate(config, inputs, &gamma),
    )?;
    let keys = [("expected", k_expected), ("seasonal", k_seasonal), ("gamma", k_gamma), ("covariate", k_covariate)]
        .into_iter()
        .map(|(n, k)| (n.to_string(), k))
        .collect();
    Ok(Fitted { expected, seasonal, gamma, covariate, keys })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountryRouting {
    pub tier: String,
    pub route: Route,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageKey {
    pub name: String,
    pub key: String,
}

/// Contents of `metadata.json`. Holds nothing that varies between
/// identical reruns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub draws: usize,
    pub rate_convention: String,
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageKey>,
    pub countries: BTreeMap<Iso3, CountryRouting>,
}

pub struct RunOutput {
    pub excess: ExcessDraws,
    pub metadata: Metadata,
    pub stages: Vec<StageRecord>,
    pub covariate: CovariateStage,
}

/// Where a run keeps its stage cache.
#[derive(Clone, Debug, Default)]
pub enum CacheLocation {
    /// `<out>/cache`.
    #[default]
    InRun,
    Dir(PathBuf),
    Disabled,
}

/// Full run from inputs in `data_dir` to a populated `out` directory.
pub fn run(config: &RunConfig, data_dir: &Path, out: &Path, cache: CacheLocation) -> Result<RunOutput> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let inputs = Inputs::load(data_dir)?;
    let mut cache = StageCache::new(match cache {
        CacheLocation::InRun => Some(out.join("cache")),
        CacheLocation::Dir(d) => Some(d),
        CacheLocation::Disabled => None,
    });
    let fitted = fit_stages(config, &inputs, &mut cache)?;
    let (predicted, _) = cache.run(
        "predict",
        &[
            fitted.keys["gamma"].clone(),
            fitted.keys["covariate"].clone(),
            inputs.hash("mortality.csv"),
            inputs.hash("subnational.csv"),
            section("subnational", &config.subnational),
            format!("seed={}", config.run.seed),
        ],
        || predict_all(config, &inputs, &fitted.gamma, &fitted.covariate),
    )?;

    let mut excess = ExcessDraws::default();
    for d in predicted.values() {
        in_stage("excess", Some(&d.country), CountryExcess::try_from(d).and_then(|ce| excess.insert(ce)))?;
    }
    let routing = inputs.routing();
    let stages: Vec<StageKey> =
        cache.records.iter().map(|r| StageKey { name: r.name.clone(), key: r.key.clone() }).collect();
    let metadata = Metadata {
        seed: config.run.seed,
        draws: excess.draws(),
        rate_convention: RATE_CONVENTION.into(),
        inputs: inputs.hashes.clone(),
        stages,
        countries: routing
            .iter()
            .map(|(c, (tier, route))| (c.clone(), CountryRouting { tier: tier.label().into(), route: *route }))
            .collect(),
    };
    in_stage("excess", None, write_run(out, config, &inputs, &fitted.covariate, &excess, &metadata))?;
    Ok(RunOutput { excess, metadata, stages: cache.records, covariate: fitted.covariate })
}

fn create(out: &Path, name: &str) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(out.join(name))?))
}

fn write_run(
    out: &Path,
    config: &RunConfig,
    inputs: &Inputs,
    covariate: &CovariateStage,
    excess: &ExcessDraws,
    metadata: &Metadata,
) -> Result<()> {
    let point = config.excess.point;
    std::fs::write(out.join("config.toml"), config.to_toml())?;
    let mut json = serde_json::to_string_pretty(metadata)?;
    json.push('\n');
    std::fs::write(out.join("metadata.json"), json)?;

    let mut w = csv::Writer::from_writer(create(out, "routing.csv")?);
    w.write_record(["country", "tier", "route", "observed_months"])?;
    for (c, r) in &metadata.countries {
        let observed = inputs.mortality.series(c).observed_prefix();
        w.write_record([c.as_str(), &r.tier, r.route.label(), &observed.to_string()])?;
    }
    w.flush()?;

    write_excess_tables(out, excess, &inputs.population, &inputs.reported, point)?;

    let mut file = excess_draws_file(excess)?;
    let d = &covariate.draws;
    file.push_matrix("covariate.coefficients", &d.coefficients)?;
    file.push("covariate.sigma_eps", vec![d.sigma_eps.len()], d.sigma_eps.clone())?;
    file.push_matrix("covariate.sigma_beta", &d.sigma_beta)?;
    file.save(&out.join("draws.bin"))?;

    let mut diag = create(out, "diagnostics.txt")?;
    writeln!(diag, "covariate model ({} cells, {} draws)", d.cells.len(), d.len())?;
    writeln!(diag, "{}", d.diagnostics)?;
    diag.flush()?;
    Ok(())
}

/// summary.csv, indicators.csv and ranks.csv.
pub fn write_excess_tables(
    out: &Path,
    excess: &ExcessDraws,
    population: &PopulationTable,
    reported: &ReportedCovidDeaths,
    point: PointEstimate,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_summary_csv(&summarize(excess, population, point)?, create(out, "summary.csv")?)?;
    write_indicators_csv(&indicators(excess, population, reported, point)?, create(out, "indicators.csv")?)?;
    write_rank_csv(&rank_countries(&country_rates(excess, population)?)?, create(out, "ranks.csv")?)?;
    Ok(())
}

fn country_rates(excess: &ExcessDraws, population: &PopulationTable) -> Result<BTreeMap<Iso3, Vec<f64>>> {
    excess
        .countries
        .keys()
        .map(|c| Ok((c.clone(), excess_rate(excess, std::slice::from_ref(c), population)?)))
        .collect()
}

/// Long-format tables for plotting: monthly and cumulative excess per
/// country, and the rank-probability heatmap.
pub fn write_plot_tables(out: &Path, excess: &ExcessDraws, population: &PopulationTable, point: PointEstimate) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let header = ["country", "t", "month", "point", "lo50", "hi50", "lo80", "hi80", "lo95", "hi95"];
    let mut monthly = csv::Writer::from_writer(create(out, "timeseries.csv")?);
    let mut cumulative = csv::Writer::from_writer(create(out, "cumulative.csv")?);
    monthly.write_record(header)?;
    cumulative.write_record(header)?;
    for (c, ce) in &excess.countries {
        let mut running = vec![0.0; ce.draws()];
        for t in PandemicMonth::all() {
            let month = &ce.excess[t.offset()];
            for (acc, v) in running.iter_mut().zip(month) {
                *acc += v;
            }
            for (w, draws) in [(&mut monthly, month), (&mut cumulative, &running)] {
                let s = Summary::of(draws, point);
                let mut rec = vec![c.to_string(), t.index().to_string(), t.label()];
                rec.extend([s.point, s.lo50, s.hi50, s.lo80, s.hi80, s.lo95, s.hi95].iter().map(|v| format!("{v:.6}")));
                w.write_record(&rec)?;
            }
        }
    }
    monthly.flush()?;
    cumulative.flush()?;
    write_rank_csv(&rank_countries(&country_rates(excess, population)?)?, create(out, "rank_heatmap.csv")?)
}

/// `<ISO>.deaths` and `<ISO>.expected` arrays, each `[24, draws]`.
pub fn excess_draws_file(excess: &ExcessDraws) -> Result<DrawsFile> {
    let mut file = DrawsFile::default();
    for (c, ce) in &excess.countries {
        file.push_matrix(&format!("{c}.deaths"), &ce.deaths)?;
        file.push_matrix(&format!("{c}.expected"), &ce.expected)?;
    }
    Ok(file)
}

/// Rebuild excess draws from every `<ISO>.deaths` / `<ISO>.expected` pair.
pub fn excess_from_draws_file(file: &DrawsFile) -> Result<ExcessDraws> {
    let mut excess = ExcessDraws::default();
    for a in &file.arrays {
        let Some(code) = a.name.strip_suffix(".deaths") else { continue };
        let c: Iso3 = code.parse()?;
        let expected = file.require(&format!("{code}.expected"))?;
        let rows = |a: &crate::draws_io::DrawsArray| -> Result<Vec<Vec<f64>>> {
            Ok(a.rows()?.into_iter().map(<[f64]>::to_vec).collect())
        };
        excess.insert(compute_excess(&c, &rows(a)?, &rows(expected)?)?)?;
    }
    if excess.countries.is_empty() {
        return Err(Error::DrawsFormat("no `<ISO>.deaths` arrays found".into()));
    }
    Ok(excess)
}

/// Cross-validation of the covariate model on the cells of a fitted run,
/// with expected numbers held at their full-data fit.
pub fn cross_validate(config: &RunConfig, inputs: &Inputs, covariate: &CovariateStage, scheme: CvScheme) -> Result<CvReport> {
    let population = |c: &Iso3, t: PandemicMonth| inputs.population.monthly(c, t);
    let input = CvInput {
        cells: &covariate.draws.cells,
        panel: &covariate.panel,
        spec: &config.covariate.model,
        config: &config.validation.fold_mcmc,
        population: &population,
    };
    in_stage("validate", None, run_cv(&input, scheme, rng::child_seed(config.run.seed, &["validate"])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::McmcConfig;
    use crate::synth::write_world;

    fn small_world() -> (tempfile::TempDir, RunConfig) {
        let dir = tempfile::tempdir().unwrap();
        write_world(dir.path(), 11).unwrap();
        let mut config = RunConfig::load(&dir.path().join("run.toml")).unwrap();
        let quick = McmcConfig { chains: 2, warmup: 300, draws: 300, keep: 100, ..McmcConfig::default() };
        config.covariate.mcmc = quick.clone();
        config.covariate.mcmc.rhat_limit = 1e9;
        config.covariate.mcmc.ess_min = 0.0;
        config.subnational.share_mcmc = McmcConfig { warmup: 300, draws: 300, ..config.covariate.mcmc.clone() };
        config.subnational.ar1_mcmc = config.subnational.share_mcmc.clone();
        config.subnational.constrained.iterations = 20_000;
        config.subnational.constrained.burn_in = 5_000;
        config.subnational.constrained.thin = 100;
        config.gamma.samples = 2_000;
        (dir, config)
    }

    #[test]
    fn run_routes_caches_and_reruns_identically() {
        let (dir, config) = small_world();
        let out = dir.path().join("out");
        let first = run(&config, dir.path(), &out, CacheLocation::InRun).unwrap();
        assert!(first.stages.iter().all(|r| !r.cached));
        let routes: Vec<Route> = first.metadata.countries.values().map(|r| r.route).collect();
        for r in [
            Route::Observed,
            Route::Benchmarked,
            Route::AnnualApportioned,
            Route::SubnationalShare,
            Route::SubnationalConstrained,
            Route::CovariatePrediction,
        ] {
            assert!(routes.contains(&r), "{r:?} unused");
        }
        for name in ["summary.csv", "indicators.csv", "ranks.csv", "draws.bin", "metadata.json", "routing.csv"] {
            assert!(out.join(name).exists(), "{name}");
        }

        // Changing reported deaths only affects the excess stage.
        let reported = dir.path().join("covid_reported.csv");
        let text = std::fs::read_to_string(&reported).unwrap();
        let (head, last) = text.trim_end().rsplit_once('\n').unwrap();
        let (row, value) = last.rsplit_once(',').unwrap();
        let bumped = value.parse::<f64>().unwrap() + 1.0;
        std::fs::write(&reported, format!("{head}\n{row},{bumped}\n")).unwrap();
        let again = run(&config, dir.path(), &out, CacheLocation::InRun).unwrap();
        assert!(again.stages.iter().all(|r| r.cached), "{:?}", again.stages);
        assert_eq!(again.excess, first.excess);

        let fresh = dir.path().join("fresh");
        run(&config, dir.path(), &fresh, CacheLocation::Disabled).unwrap();
        for name in ["summary.csv", "ranks.csv", "draws.bin"] {
            assert_eq!(std::fs::read(out.join(name)).unwrap(), std::fs::read(fresh.join(name)).unwrap(), "{name}");
        }
        let reloaded = excess_from_draws_file(&DrawsFile::load(&out.join("draws.bin")).unwrap()).unwrap();
        assert_eq!(reloaded, first.excess);
    }
}
