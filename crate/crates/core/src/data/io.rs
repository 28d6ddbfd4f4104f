//! CSV readers and writers for the engine's input tables.
//!
//! Every file is UTF-8 with a header row; a missing value is an empty field.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;

use super::types::*;
use crate::error::{Error, Result};

/// A parsed CSV record with header-based field access and line-numbered
/// error reporting.
pub(crate) struct Row<'a> {
    path: &'a Path,
    line: u64,
    header: &'a BTreeMap<String, usize>,
    record: &'a csv::StringRecord,
}

impl<'a> Row<'a> {
    pub fn line(&self) -> u64 {
        self.line
    }

    pub fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { path: self.path.to_path_buf(), line: self.line, message: message.into() }
    }

    /// Raw field, `None` when empty or the column is absent.
    pub fn opt(&self, name: &str) -> Option<&'a str> {
        let i = *self.header.get(name)?;
        self.record.get(i).map(str::trim).filter(|s| !s.is_empty())
    }

    pub fn req(&self, name: &str) -> Result<&'a str> {
        self.opt(name).ok_or_else(|| self.err(format!("missing field `{name}`")))
    }

    pub fn iso3(&self) -> Result<Iso3> {
        self.req("iso3")?.parse().map_err(|e: Error| self.err(e.to_string()))
    }

    pub fn parse<T: std::str::FromStr>(&self, name: &str) -> Result<T> {
        let raw = self.req(name)?;
        raw.parse().map_err(|_| self.err(format!("cannot parse `{raw}` in `{name}`")))
    }

    pub fn parse_opt<T: std::str::FromStr>(&self, name: &str) -> Result<Option<T>> {
        match self.opt(name) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| self.err(format!("cannot parse `{raw}` in `{name}`"))),
        }
    }

    /// Optional non-negative finite count.
    pub fn count_opt(&self, name: &str) -> Result<Option<f64>> {
        match self.parse_opt::<f64>(name)? {
            None => Ok(None),
            Some(v) if !v.is_finite() => Err(self.err(format!("non-finite `{name}`"))),
            Some(v) if v < 0.0 => Err(Error::Validation(format!(
                "{}:{}: negative count {v} in `{name}`",
                self.path.display(),
                self.line
            ))),
            Some(v) => Ok(Some(v)),
        }
    }

    pub fn month_opt(&self) -> Result<Option<u32>> {
        let m: Option<u32> = self.parse_opt("month")?;
        if let Some(m) = m {
            if !(1..=12).contains(&m) {
                return Err(self.err(format!("month {m} outside 1..=12")));
            }
        }
        Ok(m)
    }
}

/// Iterate the rows of a CSV file, checking that `required` columns exist.
pub(crate) fn for_each_row(
    path: &Path,
    required: &[&str],
    mut f: impl FnMut(&Row<'_>) -> Result<()>,
) -> Result<()> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).trim(csv::Trim::All).from_path(path)?;
    let header: BTreeMap<String, usize> = reader
        .headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    for col in required {
        if !header.contains_key(*col) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("missing column `{col}`"),
            });
        }
    }
    for result in reader.records() {
        let record = result.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = Row { path, line, header: &header, record: &record };
        f(&row)?;
    }
    Ok(())
}

/// Everything read from `mortality.csv`: pandemic-period series and
/// pre-pandemic history.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MortalityData {
    pub pandemic: BTreeMap<Iso3, MortalitySeries>,
    pub historic: BTreeMap<Iso3, HistoricSeries>,
}

impl MortalityData {
    /// Series for `c`, or a no-data series when the country has no rows.
    pub fn series(&self, c: &Iso3) -> MortalitySeries {
        self.pandemic.get(c).cloned().unwrap_or_else(|| MortalitySeries::no_data(c.clone()))
    }

    /// Add no-data series for listed countries without pandemic rows.
    pub fn include_countries<'a>(&mut self, countries: impl IntoIterator<Item = &'a Iso3>) {
        for c in countries {
            self.pandemic.entry(c.clone()).or_insert_with(|| MortalitySeries::no_data(c.clone()));
        }
    }
}

/// Read `mortality.csv` (`iso3,year,month,deaths`; month empty for annual
/// rows). Rows before 2020 are history; 2020 and 2021 are the pandemic.
pub fn ingest_mortality(path: &Path) -> Result<MortalityData> {
    let mut seen: BTreeSet<(Iso3, i32, Option<u32>)> = BTreeSet::new();
    let mut data = MortalityData::default();
    for_each_row(path, &["iso3", "year", "month", "deaths"], |row| {
        let c = row.iso3()?;
        let year: i32 = row.parse("year")?;
        let month = row.month_opt()?;
        let deaths = row.count_opt("deaths")?;
        if !seen.insert((c.clone(), year, month)) {
            return Err(row.err(format!(
                "duplicate row for {c} {year}-{}",
                month.map(|m| m.to_string()).unwrap_or_else(|| "annual".into())
            )));
        }
        if year >= PANDEMIC_START_YEAR {
            let series = data
                .pandemic
                .entry(c.clone())
                .or_insert_with(|| MortalitySeries::no_data(c.clone()));
            match month {
                Some(m) => {
                    let t = PandemicMonth::from_calendar(year, m).map_err(|e| row.err(e.to_string()))?;
                    series.counts[t.offset()] = deaths;
                }
                None => {
                    let v = (year - PANDEMIC_START_YEAR) as usize;
                    if v >= PANDEMIC_YEARS {
                        return Err(row.err(format!("year {year} after the pandemic window")));
                    }
                    series.annual_totals[v] = deaths;
                }
            }
        } else if let Some(d) = deaths {
            let h = data.historic.entry(c.clone()).or_insert_with(|| HistoricSeries {
                country: c.clone(),
                granularity: Granularity::Annual,
                monthly: BTreeMap::new(),
                annual: BTreeMap::new(),
            });
            match month {
                Some(m) => {
                    h.monthly.insert((year, m), d);
                    h.granularity = Granularity::Monthly;
                }
                None => {
                    h.annual.insert(year, d);
                }
            }
        }
        Ok(())
    })?;
    for s in data.pandemic.values_mut() {
        let prefix = s.observed_prefix();
        let later = s.counts[prefix..].iter().filter(|c| c.is_some()).count();
        if later > 0 {
            warn!(
                "{}: {later} observed month(s) after the first gap at t={} are ignored",
                s.country,
                prefix + 1
            );
            for c in &mut s.counts[prefix..] {
                *c = None;
            }
        }
        s.tier = s.infer_tier();
    }
    Ok(data)
}

/// Write the collection back in `mortality.csv` layout.
pub fn write_mortality(data: &MortalityData, out: &mut impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iso3", "year", "month", "deaths"])?;
    let fmt = |v: Option<f64>| v.map(|x| format_number(x)).unwrap_or_default();
    let countries: BTreeSet<&Iso3> = data.pandemic.keys().chain(data.historic.keys()).collect();
    for c in countries {
        if let Some(h) = data.historic.get(c) {
            for (y, d) in &h.annual {
                w.write_record([c.as_str(), &y.to_string(), "", &format_number(*d)])?;
            }
            for ((y, m), d) in &h.monthly {
                w.write_record([c.as_str(), &y.to_string(), &m.to_string(), &format_number(*d)])?;
            }
        }
        if let Some(s) = data.pandemic.get(c) {
            for (v, total) in s.annual_totals.iter().enumerate() {
                if total.is_some() {
                    let year = PANDEMIC_START_YEAR + v as i32;
                    w.write_record([c.as_str(), &year.to_string(), "", &fmt(*total)])?;
                }
            }
            for t in PandemicMonth::all() {
                if s.observed(t).is_some() {
                    w.write_record([
                        c.as_str(),
                        &t.calendar_year().to_string(),
                        &t.month().to_string(),
                        &fmt(s.observed(t)),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip decimal form of a value.
pub fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Read `region.csv` and `population.csv` into one table.
pub fn ingest_population(region_path: &Path, population_path: &Path) -> Result<PopulationTable> {
    let mut table = PopulationTable::default();
    for_each_row(region_path, &["iso3", "who_region", "income_group"], |row| {
        let c = row.iso3()?;
        let region: WhoRegion = row.req("who_region")?.parse().map_err(|e: Error| row.err(e.to_string()))?;
        let income: IncomeGroup =
            row.req("income_group")?.parse().map_err(|e: Error| row.err(e.to_string()))?;
        if table.countries.contains_key(&c) {
            return Err(row.err(format!("duplicate region row for {c}")));
        }
        table
            .countries
            .insert(c, CountryInfo { region, income, annual_population: BTreeMap::new() });
        Ok(())
    })?;
    for_each_row(population_path, &["iso3", "year", "population"], |row| {
        let c = row.iso3()?;
        let year: i32 = row.parse("year")?;
        let pop: f64 = row.parse("population")?;
        if !(pop > 0.0) {
            return Err(Error::Validation(format!("{}: population must be positive", row.line())));
        }
        let info = table
            .countries
            .get_mut(&c)
            .ok_or_else(|| row.err(format!("{c} not listed in region table")))?;
        if info.annual_population.insert(year, pop).is_some() {
            return Err(row.err(format!("duplicate population row for {c} {year}")));
        }
        Ok(())
    })?;
    Ok(table)
}

/// Read `covid_reported.csv` (`iso3,year,month,deaths`).
pub fn ingest_reported(path: &Path) -> Result<ReportedCovidDeaths> {
    let mut out = ReportedCovidDeaths::default();
    for_each_row(path, &["iso3", "year", "month", "deaths"], |row| {
        let c = row.iso3()?;
        let year: i32 = row.parse("year")?;
        let month: u32 = row.parse("month")?;
        let t = PandemicMonth::from_calendar(year, month).map_err(|e| row.err(e.to_string()))?;
        let d = row.count_opt("deaths")?.unwrap_or(0.0);
        out.counts.entry(c).or_insert_with(|| vec![0.0; PANDEMIC_MONTHS])[t.offset()] = d;
        Ok(())
    })?;
    Ok(out)
}

/// Read `temperature.csv` (`iso3,year,month,temp_c`).
pub fn ingest_temperature(path: &Path) -> Result<TemperatureTable> {
    let mut out = TemperatureTable::default();
    for_each_row(path, &["iso3", "year", "month", "temp_c"], |row| {
        let c = row.iso3()?;
        let year: i32 = row.parse("year")?;
        let month: u32 = row.parse("month")?;
        if let Some(temp) = row.parse_opt::<f64>("temp_c")? {
            if out.series.entry(c.clone()).or_default().insert((year, month), temp).is_some() {
                return Err(row.err(format!("duplicate temperature for {c} {year}-{month}")));
            }
        }
        Ok(())
    })?;
    Ok(out)
}

/// One row of `subnational.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubnationalRow {
    pub country: Iso3,
    pub region_id: String,
    pub year: i32,
    pub month: Option<u32>,
    pub deaths: Option<f64>,
}

/// Read `subnational.csv` (`iso3,region_id,year,month,deaths`).
pub fn ingest_subnational(path: &Path) -> Result<Vec<SubnationalRow>> {
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for_each_row(path, &["iso3", "region_id", "year", "month", "deaths"], |row| {
        let r = SubnationalRow {
            country: row.iso3()?,
            region_id: row.req("region_id")?.to_string(),
            year: row.parse("year")?,
            month: row.month_opt()?,
            deaths: row.count_opt("deaths")?,
        };
        if !seen.insert((r.country.clone(), r.region_id.clone(), r.year, r.month)) {
            return Err(row.err("duplicate subnational row"));
        }
        rows.push(r);
        Ok(())
    })?;
    Ok(rows)
}

/// Standard input file names inside a data directory.
#[derive(Clone, Debug)]
pub struct InputPaths {
    pub mortality: PathBuf,
    pub covariates: PathBuf,
    pub population: PathBuf,
    pub region: PathBuf,
    pub subnational: PathBuf,
    pub covid_reported: PathBuf,
    pub temperature: PathBuf,
}

impl InputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            mortality: dir.join("mortality.csv"),
            covariates: dir.join("covariates.csv"),
            population: dir.join("population.csv"),
            region: dir.join("region.csv"),
            subnational: dir.join("subnational.csv"),
            covid_reported: dir.join("covid_reported.csv"),
            temperature: dir.join("temperature.csv"),
        }
    }
}
