//! Covariate panel: ingestion, regional-median imputation and
//! standardization.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::io::for_each_row;
use super::types::*;
use crate::error::{Error, Result};
use crate::stats;

/// Centering and scaling applied to a covariate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub center: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    /// Row-major by country; time-varying covariates have 24 cells per
    /// country, constant covariates one.
    pub values: Vec<Option<f64>>,
    pub imputed: Vec<bool>,
    /// {0, 1}-valued columns are left unscaled.
    pub indicator: bool,
    pub scaling: Option<Scaling>,
}

impl Covariate {
    fn detect_indicator(&mut self) {
        let mut any = false;
        self.indicator = self.values.iter().flatten().all(|v| {
            any = true;
            *v == 0.0 || *v == 1.0
        }) && any;
    }
}

/// Time-varying and constant covariates for a fixed, sorted country list.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariatePanel {
    pub countries: Vec<Iso3>,
    pub time_varying: Vec<Covariate>,
    pub constant: Vec<Covariate>,
}

impl CovariatePanel {
    pub fn country_index(&self, c: &Iso3) -> Option<usize> {
        self.countries.binary_search(c).ok()
    }

    pub fn time_varying(&self, name: &str) -> Option<&Covariate> {
        self.time_varying.iter().find(|c| c.name == name)
    }

    pub fn constant(&self, name: &str) -> Option<&Covariate> {
        self.constant.iter().find(|c| c.name == name)
    }

    /// Value of a time-varying covariate.
    pub fn x(&self, name: &str, c: &Iso3, t: PandemicMonth) -> Result<f64> {
        let i = self.require_country(c)?;
        let cov = self
            .time_varying(name)
            .ok_or_else(|| Error::Validation(format!("unknown time-varying covariate `{name}`")))?;
        cov.values[i * PANDEMIC_MONTHS + t.offset()]
            .ok_or_else(|| Error::Validation(format!("covariate `{name}` missing for {c} t={t}")))
    }

    /// Value of a constant covariate.
    pub fn z(&self, name: &str, c: &Iso3) -> Result<f64> {
        let i = self.require_country(c)?;
        let cov = self
            .constant(name)
            .ok_or_else(|| Error::Validation(format!("unknown constant covariate `{name}`")))?;
        cov.values[i].ok_or_else(|| Error::Validation(format!("covariate `{name}` missing for {c}")))
    }

    fn require_country(&self, c: &Iso3) -> Result<usize> {
        self.country_index(c)
            .ok_or_else(|| Error::Validation(format!("no covariates for {c}")))
    }

    /// Re-index onto `countries`; newly added countries start all-missing.
    pub fn with_countries(&self, countries: &[Iso3]) -> CovariatePanel {
        let mut list: Vec<Iso3> = countries.to_vec();
        list.sort();
        list.dedup();
        let remap = |cov: &Covariate, width: usize| {
            let mut values = Vec::with_capacity(list.len() * width);
            let mut imputed = Vec::with_capacity(list.len() * width);
            for c in &list {
                match self.country_index(c) {
                    Some(i) => {
                        values.extend_from_slice(&cov.values[i * width..(i + 1) * width]);
                        imputed.extend_from_slice(&cov.imputed[i * width..(i + 1) * width]);
                    }
                    None => {
                        values.extend(std::iter::repeat_n(None, width));
                        imputed.extend(std::iter::repeat_n(false, width));
                    }
                }
            }
            Covariate { values, imputed, ..cov.clone() }
        };
        CovariatePanel {
            time_varying: self.time_varying.iter().map(|c| remap(c, PANDEMIC_MONTHS)).collect(),
            constant: self.constant.iter().map(|c| remap(c, 1)).collect(),
            countries: list,
        }
    }
}

/// Read `covariates.csv` (`iso3,year,month,name,value`; month empty for
/// constant covariates).
pub fn ingest_covariates(path: &Path) -> Result<CovariatePanel> {
    let mut tv: BTreeMap<String, BTreeMap<(Iso3, usize), Option<f64>>> = BTreeMap::new();
    let mut cst: BTreeMap<String, BTreeMap<Iso3, Option<f64>>> = BTreeMap::new();
    let mut countries = BTreeSet::new();
    for_each_row(path, &["iso3", "year", "month", "name", "value"], |row| {
        let c = row.iso3()?;
        let name = row.req("name")?.to_string();
        let value: Option<f64> = row.parse_opt("value")?;
        if let Some(v) = value {
            if !v.is_finite() {
                return Err(row.err("non-finite covariate value"));
            }
        }
        countries.insert(c.clone());
        match row.month_opt()? {
            Some(m) => {
                let year: i32 = row.parse("year")?;
                let t = PandemicMonth::from_calendar(year, m).map_err(|e| row.err(e.to_string()))?;
                if tv.entry(name.clone()).or_default().insert((c.clone(), t.offset()), value).is_some() {
                    return Err(row.err(format!("duplicate covariate `{name}` for {c} t={t}")));
                }
            }
            None => {
                if cst.entry(name.clone()).or_default().insert(c.clone(), value).is_some() {
                    return Err(row.err(format!("duplicate constant covariate `{name}` for {c}")));
                }
            }
        }
        Ok(())
    })?;
    let countries: Vec<Iso3> = countries.into_iter().collect();
    let n = countries.len();
    let time_varying = tv
        .into_iter()
        .map(|(name, cells)| {
            let mut values = vec![None; n * PANDEMIC_MONTHS];
            for ((c, t), v) in cells {
                let i = countries.binary_search(&c).expect("country collected");
                values[i * PANDEMIC_MONTHS + t] = v;
            }
            let mut cov = Covariate { name, imputed: vec![false; values.len()], values, indicator: false, scaling: None };
            cov.detect_indicator();
            cov
        })
        .collect();
    let constant = cst
        .into_iter()
        .map(|(name, cells)| {
            let mut values = vec![None; n];
            for (c, v) in cells {
                values[countries.binary_search(&c).expect("country collected")] = v;
            }
            let mut cov = Covariate { name, imputed: vec![false; n], values, indicator: false, scaling: None };
            cov.detect_indicator();
            cov
        })
        .collect();
    Ok(CovariatePanel { countries, time_varying, constant })
}

/// Fill missing cells with the WHO-region median of the same covariate
/// (and month), falling back to the global median when the whole region is
/// missing; then center and scale every non-indicator covariate using the
/// mean and sample standard deviation (denominator n - 1) of the non-imputed
/// cells inside the fitting set.
///
/// `in_fitting_set(country, t)` selects the country-months with observed
/// mortality. Constant covariates use the countries with at least one
/// fitting cell.
pub fn standardize_covariates(
    raw: &CovariatePanel,
    population: &PopulationTable,
    in_fitting_set: impl Fn(&Iso3, PandemicMonth) -> bool,
) -> Result<CovariatePanel> {
    let mut panel = raw.clone();
    let regions: Vec<WhoRegion> =
        panel.countries.iter().map(|c| population.region(c)).collect::<Result<_>>()?;
    let fit_cells: Vec<Vec<bool>> = panel
        .countries
        .iter()
        .map(|c| PandemicMonth::all().map(|t| in_fitting_set(c, t)).collect())
        .collect();
    let fit_country: Vec<bool> = fit_cells.iter().map(|row| row.iter().any(|&b| b)).collect();

    for cov in &mut panel.time_varying {
        for t in 0..PANDEMIC_MONTHS {
            let column: Vec<Option<f64>> =
                (0..panel.countries.len()).map(|i| cov.values[i * PANDEMIC_MONTHS + t]).collect();
            let filled = impute_column(&column, &regions, &cov.name, &format!("t={}", t + 1));
            for (i, v) in filled.into_iter().enumerate() {
                let k = i * PANDEMIC_MONTHS + t;
                if cov.values[k].is_none() && v.is_some() {
                    cov.values[k] = v;
                    cov.imputed[k] = true;
                }
            }
        }
        if !cov.indicator {
            let fit: Vec<f64> = (0..panel.countries.len())
                .flat_map(|i| (0..PANDEMIC_MONTHS).map(move |t| (i, t)))
                .filter(|&(i, t)| fit_cells[i][t] && !cov.imputed[i * PANDEMIC_MONTHS + t])
                .filter_map(|(i, t)| cov.values[i * PANDEMIC_MONTHS + t])
                .collect();
            apply_scaling(cov, &fit);
        }
    }
    for cov in &mut panel.constant {
        let filled = impute_column(&cov.values, &regions, &cov.name, "constant");
        for (i, v) in filled.into_iter().enumerate() {
            if cov.values[i].is_none() && v.is_some() {
                cov.values[i] = v;
                cov.imputed[i] = true;
            }
        }
        if !cov.indicator {
            let fit: Vec<f64> = (0..panel.countries.len())
                .filter(|&i| fit_country[i] && !cov.imputed[i])
                .filter_map(|i| cov.values[i])
                .collect();
            apply_scaling(cov, &fit);
        }
    }
    Ok(panel)
}

fn apply_scaling(cov: &mut Covariate, fit: &[f64]) {
    if fit.len() < 2 {
        warn!("covariate `{}`: fewer than two fitting cells; left unscaled", cov.name);
        return;
    }
    let center = stats::mean(fit);
    let mut scale = stats::sample_sd(fit);
    if !(scale > 0.0) {
        warn!("covariate `{}` is constant over the fitting set; centered only", cov.name);
        scale = 1.0;
    }
    for v in cov.values.iter_mut().flatten() {
        *v = (*v - center) / scale;
    }
    cov.scaling = Some(Scaling { center, scale });
}

fn impute_column(column: &[Option<f64>], regions: &[WhoRegion], name: &str, cell: &str) -> Vec<Option<f64>> {
    let present: Vec<f64> = column.iter().flatten().copied().collect();
    let global = (!present.is_empty()).then(|| stats::median(&present));
    let mut by_region: BTreeMap<WhoRegion, Vec<f64>> = BTreeMap::new();
    for (v, r) in column.iter().zip(regions) {
        if let Some(v) = v {
            by_region.entry(*r).or_default().push(*v);
        }
    }
    column
        .iter()
        .zip(regions)
        .map(|(v, r)| {
            if v.is_some() {
                return *v;
            }
            match by_region.get(r) {
                Some(peers) => Some(stats::median(peers)),
                None => {
                    warn!("covariate `{name}` ({cell}) missing for all of {}; using global median", r.code());
                    global
                }
            }
        })
        .collect()
}
