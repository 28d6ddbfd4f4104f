use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First calendar year of the pandemic window.
pub const PANDEMIC_START_YEAR: i32 = 2020;
/// Number of pandemic months (January 2020 to December 2021).
pub const PANDEMIC_MONTHS: usize = 24;
pub const PANDEMIC_YEARS: usize = 2;

/// ISO 3166 alpha-3 country code.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Iso3(String);

impl Iso3 {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for Iso3 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() == 3 && s.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit()) {
            Ok(Iso3(s.to_string()))
        } else {
            Err(Error::Validation(format!("invalid ISO3 code `{s}`")))
        }
    }
}

impl TryFrom<String> for Iso3 {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Iso3> for String {
    fn from(c: Iso3) -> String {
        c.0
    }
}

impl fmt::Display for Iso3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Pandemic month index t in 1..=24, with t = 12 (v - 1) + m.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PandemicMonth(u8);

impl PandemicMonth {
    pub fn new(t: usize) -> Result<Self> {
        if (1..=PANDEMIC_MONTHS).contains(&t) {
            Ok(Self(t as u8))
        } else {
            Err(Error::Range {
                what: "pandemic month",
                value: t as i64,
                allowed: format!("1..={PANDEMIC_MONTHS}"),
            })
        }
    }

    pub fn from_calendar(year: i32, month: u32) -> Result<Self> {
        let v = year - PANDEMIC_START_YEAR + 1;
        if !(1..=PANDEMIC_YEARS as i32).contains(&v) || !(1..=12).contains(&month) {
            return Err(Error::Range {
                what: "pandemic calendar month",
                value: (year as i64) * 100 + month as i64,
                allowed: "2020-01..=2021-12".into(),
            });
        }
        Self::new(12 * (v as usize - 1) + month as usize)
    }

    pub fn all() -> impl Iterator<Item = PandemicMonth> {
        (1..=PANDEMIC_MONTHS).map(|t| PandemicMonth(t as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Zero-based position, handy for array indexing.
    pub fn offset(self) -> usize {
        self.0 as usize - 1
    }

    /// Pandemic year v in {1, 2}.
    pub fn year_index(self) -> usize {
        (self.0 as usize - 1) / 12 + 1
    }

    /// Calendar month m in 1..=12.
    pub fn month(self) -> u32 {
        ((self.0 as usize - 1) % 12 + 1) as u32
    }

    pub fn calendar_year(self) -> i32 {
        PANDEMIC_START_YEAR + self.year_index() as i32 - 1
    }

    /// Calendar label such as "2020-01".
    pub fn label(self) -> String {
        format!("{}-{:02}", self.calendar_year(), self.month())
    }
}

impl fmt::Display for PandemicMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Data-availability class of a country for the pandemic period.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tier {
    FullNational,
    /// National monthly data for the first `observed` months only.
    PartialNational { observed: usize },
    SubnationalOrAnnual,
    NoData,
}

impl Tier {
    pub fn label(&self) -> &'static str {
        match self {
            Tier::FullNational => "full_national",
            Tier::PartialNational { .. } => "partial_national",
            Tier::SubnationalOrAnnual => "subnational_or_annual",
            Tier::NoData => "no_data",
        }
    }
}

/// Observed pandemic all-cause mortality for one country.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MortalitySeries {
    pub country: Iso3,
    /// Monthly national counts for t = 1..=24; `None` when unobserved.
    pub counts: Vec<Option<f64>>,
    /// Annual national totals for the two pandemic years, if reported.
    pub annual_totals: [Option<f64>; PANDEMIC_YEARS],
    pub tier: Tier,
    pub completeness_scale: f64,
}

impl MortalitySeries {
    pub fn no_data(country: Iso3) -> Self {
        Self {
            country,
            counts: vec![None; PANDEMIC_MONTHS],
            annual_totals: [None; PANDEMIC_YEARS],
            tier: Tier::NoData,
            completeness_scale: 1.0,
        }
    }

    pub fn observed(&self, t: PandemicMonth) -> Option<f64> {
        self.counts[t.offset()]
    }

    /// Length of the contiguous observed prefix.
    pub fn observed_prefix(&self) -> usize {
        self.counts.iter().take_while(|c| c.is_some()).count()
    }

    /// Tier implied by the national observation pattern alone.
    pub fn infer_tier(&self) -> Tier {
        let prefix = self.observed_prefix();
        if prefix == PANDEMIC_MONTHS {
            Tier::FullNational
        } else if prefix >= 1 {
            Tier::PartialNational { observed: prefix }
        } else if self.annual_totals.iter().any(Option::is_some) {
            Tier::SubnationalOrAnnual
        } else {
            Tier::NoData
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Granularity {
    Monthly,
    Annual,
}

/// Pre-pandemic national counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoricSeries {
    pub country: Iso3,
    pub granularity: Granularity,
    /// Monthly counts keyed by (year, month).
    pub monthly: BTreeMap<(i32, u32), f64>,
    /// Annual totals keyed by year.
    pub annual: BTreeMap<i32, f64>,
}

/// Fewer historic months than this triggers the linear-trend fallback.
pub const LINEAR_FALLBACK_MONTHS: usize = 36;
pub const MIN_HISTORIC_MONTHS: usize = 24;

impl HistoricSeries {
    pub fn months(&self) -> usize {
        self.monthly.len()
    }

    pub fn needs_linear_fallback(&self) -> bool {
        match self.granularity {
            Granularity::Monthly => self.monthly.len() < LINEAR_FALLBACK_MONTHS,
            Granularity::Annual => self.annual.len() < 3,
        }
    }

    /// Years covered, in order.
    pub fn span(&self) -> Vec<i32> {
        match self.granularity {
            Granularity::Monthly => {
                let mut ys: Vec<i32> = self.monthly.keys().map(|(y, _)| *y).collect();
                ys.dedup();
                ys
            }
            Granularity::Annual => self.annual.keys().copied().collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WhoRegion {
    Afro,
    Amro,
    Emro,
    Euro,
    Searo,
    Wpro,
}

impl WhoRegion {
    pub const ALL: [WhoRegion; 6] = [
        WhoRegion::Afro,
        WhoRegion::Amro,
        WhoRegion::Emro,
        WhoRegion::Euro,
        WhoRegion::Searo,
        WhoRegion::Wpro,
    ];

    pub fn code(&self) -> &'static str {
        match self {
            WhoRegion::Afro => "AFRO",
            WhoRegion::Amro => "AMRO",
            WhoRegion::Emro => "EMRO",
            WhoRegion::Euro => "EURO",
            WhoRegion::Searo => "SEARO",
            WhoRegion::Wpro => "WPRO",
        }
    }
}

impl FromStr for WhoRegion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        WhoRegion::ALL
            .into_iter()
            .find(|r| r.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Validation(format!("unknown WHO region `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IncomeGroup {
    High,
    LowMiddle,
}

impl IncomeGroup {
    pub fn code(&self) -> &'static str {
        match self {
            IncomeGroup::High => "High",
            IncomeGroup::LowMiddle => "LowMiddle",
        }
    }

    /// 1 for high income; used as the income interaction indicator.
    pub fn indicator(&self) -> f64 {
        match self {
            IncomeGroup::High => 1.0,
            IncomeGroup::LowMiddle => 0.0,
        }
    }
}

impl FromStr for IncomeGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.trim().to_ascii_lowercase().chars().filter(|c| c.is_alphanumeric()).collect();
        match norm.as_str() {
            "high" | "hic" | "highincome" => Ok(IncomeGroup::High),
            "lowmiddle" | "lmic" | "low" | "middle" | "lowmiddleincome" => Ok(IncomeGroup::LowMiddle),
            _ => Err(Error::Validation(format!("unknown income group `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountryInfo {
    pub region: WhoRegion,
    pub income: IncomeGroup,
    /// Annual (mid-year) populations keyed by year.
    pub annual_population: BTreeMap<i32, f64>,
}

/// Region, income group and population for every country.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationTable {
    pub countries: BTreeMap<Iso3, CountryInfo>,
}

impl PopulationTable {
    pub fn info(&self, c: &Iso3) -> Result<&CountryInfo> {
        self.countries
            .get(c)
            .ok_or_else(|| Error::Validation(format!("country {c} missing from region table")))
    }

    pub fn region(&self, c: &Iso3) -> Result<WhoRegion> {
        Ok(self.info(c)?.region)
    }

    /// Population for a pandemic month. Annual values are taken as mid-year
    /// (July) figures and interpolated linearly in month; outside the range
    /// of supplied years the nearest value is used.
    pub fn monthly(&self, c: &Iso3, t: PandemicMonth) -> Result<f64> {
        let info = self.info(c)?;
        let annual = &info.annual_population;
        if annual.is_empty() {
            return Err(Error::Validation(format!("no population for {c}")));
        }
        let pos = t.calendar_year() as f64 + (t.month() as f64 - 7.0) / 12.0;
        let below = annual.range(..=pos.floor() as i32).next_back();
        let above = annual.range(pos.ceil() as i32..).next();
        let n = match (below, above) {
            (Some((&y0, &n0)), Some((&y1, &n1))) if y1 != y0 => {
                let w = (pos - y0 as f64) / (y1 - y0) as f64;
                n0 + w * (n1 - n0)
            }
            (Some((_, &n0)), _) => n0,
            (None, Some((_, &n1))) => n1,
            (None, None) => unreachable!("non-empty map"),
        };
        if n <= 0.0 {
            return Err(Error::Validation(format!("non-positive population for {c}")));
        }
        Ok(n)
    }

    /// Person-years over the full pandemic window.
    pub fn person_years(&self, c: &Iso3) -> Result<f64> {
        let mut total = 0.0;
        for t in PandemicMonth::all() {
            total += self.monthly(c, t)? / 12.0;
        }
        Ok(total)
    }
}

/// Reported COVID-19 deaths per country and pandemic month.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportedCovidDeaths {
    pub counts: BTreeMap<Iso3, Vec<f64>>,
}

impl ReportedCovidDeaths {
    pub fn total(&self, c: &Iso3) -> Option<f64> {
        self.counts.get(c).map(|v| v.iter().sum())
    }
}

/// Smoothed monthly temperatures keyed by (year, month).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TemperatureTable {
    pub series: BTreeMap<Iso3, BTreeMap<(i32, u32), f64>>,
}

impl TemperatureTable {
    /// Twelve temperatures for a calendar year, if complete.
    pub fn year(&self, c: &Iso3, year: i32) -> Option<[f64; 12]> {
        let s = self.series.get(c)?;
        let mut out = [0.0; 12];
        for m in 1..=12u32 {
            out[m as usize - 1] = *s.get(&(year, m))?;
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pandemic_month_mapping_is_bijective() {
        let mut seen = std::collections::BTreeSet::new();
        for t in PandemicMonth::all() {
            let back = PandemicMonth::from_calendar(t.calendar_year(), t.month()).unwrap();
            assert_eq!(back, t);
            assert_eq!(t.index(), 12 * (t.year_index() - 1) + t.month() as usize);
            seen.insert((t.year_index(), t.month()));
        }
        assert_eq!(seen.len(), 24);
        assert!(PandemicMonth::new(25).is_err());
        assert!(PandemicMonth::new(0).is_err());
    }

    #[test]
    fn tiers_from_observation_pattern() {
        let c: Iso3 = "PER".parse().unwrap();
        let mut s = MortalitySeries::no_data(c);
        assert_eq!(s.infer_tier(), Tier::NoData);
        for t in 0..18 {
            s.counts[t] = Some(1000.0);
        }
        assert_eq!(s.infer_tier(), Tier::PartialNational { observed: 18 });
        for t in 18..24 {
            s.counts[t] = Some(1000.0);
        }
        assert_eq!(s.infer_tier(), Tier::FullNational);
    }

    #[test]
    fn population_interpolates_linearly() {
        let c: Iso3 = "AAA".parse().unwrap();
        let mut table = PopulationTable::default();
        table.countries.insert(
            c.clone(),
            CountryInfo {
                region: WhoRegion::Euro,
                income: IncomeGroup::High,
                annual_population: [(2020, 1200.0), (2021, 2400.0)].into_iter().collect(),
            },
        );
        let july = PandemicMonth::from_calendar(2020, 7).unwrap();
        let jan21 = PandemicMonth::from_calendar(2021, 1).unwrap();
        let dec21 = PandemicMonth::from_calendar(2021, 12).unwrap();
        assert_eq!(table.monthly(&c, july).unwrap(), 1200.0);
        assert!((table.monthly(&c, jan21).unwrap() - 1800.0).abs() < 1e-9);
        assert_eq!(table.monthly(&c, dec21).unwrap(), 2400.0);
    }

    #[test]
    fn iso3_validation() {
        assert!("PER".parse::<Iso3>().is_ok());
        assert!("pe".parse::<Iso3>().is_err());
        assert!("PERU".parse::<Iso3>().is_err());
    }
}
