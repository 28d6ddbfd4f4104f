use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariate::{fit_cells, predict_cell, McmcConfig, ModelSpec, ObservedCell};
use crate::data::{CovariatePanel, Iso3, PandemicMonth};
use crate::error::{Error, Result};
use crate::gamma::GammaParams;
use crate::rng;
use crate::stats;

pub const MIN_FOLDS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvScheme {
    /// Each fold holds out every month of one country.
    Country,
    /// Each fold holds out one pandemic month across all countries.
    Month,
}

impl std::str::FromStr for CvScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "country" => Ok(Self::Country),
            "month" => Ok(Self::Month),
            other => Err(Error::Config(format!("unknown CV scheme {other:?} (expected country or month)"))),
        }
    }
}

/// Predictive draws of deaths for one held-out cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellPrediction {
    pub country: Iso3,
    pub t: PandemicMonth,
    pub observed: f64,
    pub population: f64,
    pub tau: f64,
    pub draws: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub country: Iso3,
    pub t: PandemicMonth,
    pub observed_rate: f64,
    pub predicted_rate: f64,
    pub predicted_mean: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub hit50: bool,
    pub hit80: bool,
    pub hit95: bool,
}

/// Coverages are fractions; biases are percentages of the observed rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvMetrics {
    pub cells: usize,
    pub coverage50: f64,
    pub coverage80: f64,
    pub coverage95: f64,
    pub relative_bias_pct: f64,
    pub absolute_relative_bias_pct: f64,
    pub rmse: f64,
    pub rmse_x1000: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FoldStatus {
    Scored,
    Skipped(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: String,
    pub held_out: usize,
    pub fit_cells: usize,
    /// SHA-256 over the cells the fold's fit saw.
    pub fingerprint: String,
    pub status: FoldStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub scheme: CvScheme,
    pub metrics: CvMetrics,
    pub folds: Vec<FoldRecord>,
    pub cells: Vec<CellRecord>,
}

fn interval_hit(sorted: &[f64], level: f64, y: f64) -> bool {
    let tail = (1.0 - level) / 2.0;
    stats::quantile_sorted(sorted, tail) <= y && y <= stats::quantile_sorted(sorted, 1.0 - tail)
}

fn record(p: &CellPrediction) -> Result<CellRecord> {
    if p.draws.is_empty() || !(p.population > 0.0) || !(p.observed > 0.0) {
        return Err(Error::Validation(format!(
            "{} month {}: scoring needs draws, a positive population and a positive observed count",
            p.country,
            p.t.index()
        )));
    }
    let sorted = stats::sorted(&p.draws);
    Ok(CellRecord {
        country: p.country.clone(),
        t: p.t,
        observed_rate: p.observed / p.population,
        predicted_rate: stats::quantile_sorted(&sorted, 0.5) / p.population,
        predicted_mean: stats::mean(&sorted),
        lo95: stats::quantile_sorted(&sorted, 0.025),
        hi95: stats::quantile_sorted(&sorted, 0.975),
        hit50: interval_hit(&sorted, 0.5, p.observed),
        hit80: interval_hit(&sorted, 0.8, p.observed),
        hit95: interval_hit(&sorted, 0.95, p.observed),
    })
}

fn metrics(records: &[CellRecord]) -> CvMetrics {
    let n = records.len() as f64;
    let frac = |f: fn(&CellRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / n;
    let rel: Vec<f64> = records.iter().map(|r| (r.predicted_rate - r.observed_rate) / r.observed_rate).collect();
    let mse = records.iter().map(|r| (r.predicted_rate - r.observed_rate).powi(2)).sum::<f64>() / n;
    CvMetrics {
        cells: records.len(),
        coverage50: frac(|r| r.hit50),
        coverage80: frac(|r| r.hit80),
        coverage95: frac(|r| r.hit95),
        relative_bias_pct: 100.0 * rel.iter().sum::<f64>() / n,
        absolute_relative_bias_pct: 100.0 * rel.iter().map(|v| v.abs()).sum::<f64>() / n,
        rmse: mse.sqrt(),
        rmse_x1000: 1000.0 * mse.sqrt(),
    }
}

/// Records sorted by (country, month), so the metrics do not depend on
/// input order.
pub fn score_cells(predictions: &[CellPrediction]) -> Result<(CvMetrics, Vec<CellRecord>)> {
    if predictions.is_empty() {
        return Err(Error::Precondition("no cells to score".into()));
    }
    let mut records = predictions.iter().map(record).collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| (&a.country, a.t).cmp(&(&b.country, b.t)));
    Ok((metrics(&records), records))
}

pub struct CvInput<'a> {
    pub cells: &'a [ObservedCell],
    pub panel: &'a CovariatePanel,
    pub spec: &'a ModelSpec,
    pub config: &'a McmcConfig,
    pub population: &'a (dyn Fn(&Iso3, PandemicMonth) -> Result<f64> + Sync),
}

fn fingerprint(cells: &[ObservedCell]) -> String {
    let mut h = Sha256::new();
    for c in cells {
        h.update(c.country.as_str().as_bytes());
        h.update([c.t.index() as u8]);
        for v in [c.y, c.e_hat, c.tau] {
            h.update(v.to_le_bytes());
        }
    }
    crate::digest::finish(h)
}

fn fold_key(scheme: CvScheme, c: &ObservedCell) -> String {
    match scheme {
        CvScheme::Country => c.country.as_str().to_string(),
        CvScheme::Month => c.t.label(),
    }
}

struct FoldOutcome {
    record: FoldRecord,
    predictions: Vec<CellPrediction>,
}

fn run_fold(input: &CvInput, scheme: CvScheme, fold: &str, seed: u64) -> Result<FoldOutcome> {
    let (held, train): (Vec<ObservedCell>, Vec<ObservedCell>) =
        input.cells.iter().cloned().partition(|c| fold_key(scheme, c) == fold);
    let train_keys: BTreeSet<(&Iso3, PandemicMonth)> = train.iter().map(|c| (&c.country, c.t)).collect();
    if let Some(c) = held.iter().find(|c| train_keys.contains(&(&c.country, c.t))) {
        return Err(Error::Validation(format!("fold {fold}: cell {} {} is both held out and fitted", c.country, c.t.label())));
    }
    let mut record = FoldRecord {
        fold: fold.to_string(),
        held_out: held.len(),
        fit_cells: train.len(),
        fingerprint: fingerprint(&train),
        status: FoldStatus::Scored,
    };
    let fit_seed = rng::child_seed(seed, &["cv", fold, "fit"]);
    let draws = match fit_cells(train, input.panel, input.spec, input.config, fit_seed) {
        Ok(d) => d,
        Err(e @ (Error::Diagnostics(_) | Error::NonConvergence { .. })) => {
            log::warn!("CV fold {fold} skipped: {e}");
            record.status = FoldStatus::Skipped(e.to_string());
            return Ok(FoldOutcome { record, predictions: vec![] });
        }
        Err(e) => return Err(e),
    };
    let mut r = rng::stream(seed, &["cv", fold, "predict"]);
    let predictions = held
        .iter()
        .map(|c| {
            let g = GammaParams { mean: c.e_hat, shape: c.tau };
            Ok(CellPrediction {
                country: c.country.clone(),
                t: c.t,
                observed: c.y,
                population: (input.population)(&c.country, c.t)?,
                tau: c.tau,
                draws: predict_cell(&mut r, &draws, input.panel, &c.country, c.t, g)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldOutcome { record, predictions })
}

/// Refit the covariate model once per fold without the fold's cells and
/// score the held-out cells against their predictive distributions.
pub fn run_cv(input: &CvInput, scheme: CvScheme, seed: u64) -> Result<CvReport> {
    let folds: Vec<String> =
        input.cells.iter().map(|c| fold_key(scheme, c)).collect::<BTreeSet<_>>().into_iter().collect();
    if folds.len() < MIN_FOLDS {
        return Err(Error::Precondition(format!("cross-validation needs at least {MIN_FOLDS} folds, found {}", folds.len())));
    }
    let outcomes = folds.par_iter().map(|f| run_fold(input, scheme, f, seed)).collect::<Result<Vec<_>>>()?;
    let predictions: Vec<CellPrediction> = outcomes.iter().flat_map(|o| o.predictions.iter().cloned()).collect();
    let folds: Vec<FoldRecord> = outcomes.into_iter().map(|o| o.record).collect();
    if predictions.is_empty() {
        return Err(Error::Precondition("every cross-validation fold was skipped".into()));
    }
    let (metrics, cells) = score_cells(&predictions)?;
    Ok(CvReport { scheme, metrics, folds, cells })
}

impl CvReport {
    /// Held-out cells grouped by fold label, for leak checks.
    pub fn cells_by_fold(&self) -> BTreeMap<String, Vec<(Iso3, PandemicMonth)>> {
        let mut out: BTreeMap<String, Vec<(Iso3, PandemicMonth)>> = BTreeMap::new();
        for c in &self.cells {
            let key = match self.scheme {
                CvScheme::Country => c.country.as_str().to_string(),
                CvScheme::Month => c.t.label(),
            };
            out.entry(key).or_default().push((c.country.clone(), c.t));
        }
        out
    }

    pub fn write_cells_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["country", "month", "observed_rate", "predicted_rate", "lo95", "hi95", "hit50", "hit80", "hit95"])?;
        for c in &self.cells {
            out.write_record([
                c.country.as_str().to_string(),
                c.t.label(),
                c.observed_rate.to_string(),
                c.predicted_rate.to_string(),
                c.lo95.to_string(),
                c.hi95.to_string(),
                c.hit50.to_string(),
                c.hit80.to_string(),
                c.hit95.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariate::{simulate_covariate_data, SimulationSettings};

    fn pred(c: &str, t: usize, y: f64, n: f64, draws: Vec<f64>) -> CellPrediction {
        CellPrediction { country: c.parse().unwrap(), t: PandemicMonth::new(t).unwrap(), observed: y, population: n, tau: 1e8, draws }
    }

    #[test]
    fn perfect_predictions_score_perfectly() {
        let p: Vec<CellPrediction> = (1..=5).map(|t| pred("AAA", t, 100.0 * t as f64, 1e5, vec![100.0 * t as f64; 50])).collect();
        let (m, _) = score_cells(&p).unwrap();
        assert_eq!((m.relative_bias_pct, m.absolute_relative_bias_pct, m.rmse), (0.0, 0.0, 0.0));
        assert_eq!((m.coverage50, m.coverage80, m.coverage95), (1.0, 1.0, 1.0));
    }

    #[test]
    fn three_cell_table_matches_hand_computation() {
        // Point draws make the median exact: r̂ = 110/1000, 90/2000, 300/1000.
        let p = vec![
            pred("AAA", 1, 100.0, 1000.0, vec![110.0; 3]),
            pred("BBB", 1, 100.0, 2000.0, vec![90.0; 3]),
            pred("CCC", 2, 200.0, 1000.0, vec![300.0; 3]),
        ];
        let (m, _) = score_cells(&p).unwrap();
        let rel = [0.1, -0.1, 0.5];
        assert!((m.relative_bias_pct - 100.0 * rel.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert!((m.absolute_relative_bias_pct - 100.0 * 0.7 / 3.0).abs() < 1e-12);
        let sq = [0.01f64.powi(2), 0.005f64.powi(2), 0.1f64.powi(2)];
        assert!((m.rmse - (sq.iter().sum::<f64>() / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(m.coverage95, 0.0);
    }

    #[test]
    fn metrics_do_not_depend_on_country_order() {
        let mut r = rng::stream(1, &["perm"]);
        let mut p: Vec<CellPrediction> = (0..12)
            .map(|i| {
                let draws = (0..200).map(|_| stats::normal(&mut r, 1000.0, 50.0)).collect();
                pred(&format!("C{i:02}"), 1 + i % 24, 1000.0 + 10.0 * i as f64, 5e4, draws)
            })
            .collect();
        let (a, _) = score_cells(&p).unwrap();
        p.reverse();
        p.swap(2, 7);
        let (b, _) = score_cells(&p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scoring_rejects_zero_population() {
        assert!(matches!(score_cells(&[pred("AAA", 1, 5.0, 0.0, vec![5.0])]), Err(Error::Validation(_))));
    }

    #[test]
    fn folds_never_see_their_held_out_cells() {
        let mut r = rng::stream(3, &["cv-sim"]);
        let settings = SimulationSettings { countries: 6, ..SimulationSettings::default() };
        let sim = simulate_covariate_data(&mut r, &settings);
        let config = McmcConfig { chains: 2, warmup: 300, draws: 300, keep: 200, rhat_limit: 10.0, ess_min: 1.0 };
        let population = |_: &Iso3, _: PandemicMonth| Ok(1e6);
        let input = CvInput { cells: &sim.cells, panel: &sim.panel, spec: &sim.spec, config: &config, population: &population };
        let report = run_cv(&input, CvScheme::Country, 3).unwrap();
        assert_eq!(report.folds.len(), 6);
        assert_eq!(report.cells.len(), sim.cells.len());
        let prints: BTreeSet<&String> = report.folds.iter().map(|f| &f.fingerprint).collect();
        assert_eq!(prints.len(), 6);
        for f in &report.folds {
            assert_eq!(f.held_out + f.fit_cells, sim.cells.len());
            let train: Vec<ObservedCell> = sim.cells.iter().filter(|c| c.country.as_str() != f.fold).cloned().collect();
            assert_eq!(fingerprint(&train), f.fingerprint);
        }
        assert!((0.0..=1.0).contains(&report.metrics.coverage95));
        let again = run_cv(&input, CvScheme::Country, 3).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn too_few_folds_is_a_precondition_error() {
        let mut r = rng::stream(4, &["cv-few"]);
        let sim = simulate_covariate_data(&mut r, &SimulationSettings { countries: 2, ..SimulationSettings::default() });
        let population = |_: &Iso3, _: PandemicMonth| Ok(1e6);
        let config = McmcConfig::default();
        let input = CvInput { cells: &sim.cells, panel: &sim.panel, spec: &sim.spec, config: &config, population: &population };
        assert!(matches!(run_cv(&input, CvScheme::Country, 1), Err(Error::Precondition(_))));
    }
}
