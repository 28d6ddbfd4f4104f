use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{HistoricSeries, Iso3, SubnationalRow, PANDEMIC_START_YEAR};
use crate::error::{Error, Result};

/// One period of region-level data. `month` is `None` for annual aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelMonth {
    pub year: i32,
    pub month: Option<u32>,
    /// National total; known for historic periods only.
    pub national: Option<f64>,
    /// Count per region, `None` when the region did not report.
    pub regions: Vec<Option<f64>>,
}

impl PanelMonth {
    pub fn is_historic(&self) -> bool {
        self.year < PANDEMIC_START_YEAR
    }

    pub fn observed_sum(&self) -> f64 {
        self.regions.iter().flatten().sum()
    }

    pub fn reporting(&self) -> usize {
        self.regions.iter().filter(|r| r.is_some()).count()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.regions.iter().map(Option::is_some).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubnationalPanel {
    pub country: Iso3,
    pub regions: Vec<String>,
    /// Periods in chronological order.
    pub months: Vec<PanelMonth>,
}

impl SubnationalPanel {
    /// Assemble a panel from subnational rows, attaching historic national
    /// totals (monthly, or annual for rows without a month).
    pub fn from_rows(country: &Iso3, rows: &[SubnationalRow], national: &HistoricSeries) -> Result<Self> {
        let rows: Vec<&SubnationalRow> = rows.iter().filter(|r| &r.country == country).collect();
        if rows.is_empty() {
            return Err(Error::Precondition(format!("{country}: no subnational rows")));
        }
        let regions: Vec<String> =
            rows.iter().map(|r| r.region_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let index: BTreeMap<&str, usize> = regions.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
        let mut periods: BTreeMap<(i32, Option<u32>), Vec<Option<f64>>> = BTreeMap::new();
        for r in &rows {
            if r.year >= PANDEMIC_START_YEAR + 2 {
                continue;
            }
            let slot = periods.entry((r.year, r.month)).or_insert_with(|| vec![None; regions.len()]);
            slot[index[r.region_id.as_str()]] = r.deaths;
        }
        let months = periods
            .into_iter()
            .map(|((year, month), regions)| {
                let national = if year < PANDEMIC_START_YEAR {
                    match month {
                        Some(m) => national.monthly.get(&(year, m)).copied(),
                        None => national.annual.get(&year).copied(),
                    }
                } else {
                    None
                };
                PanelMonth { year, month, national, regions }
            })
            .collect();
        let panel = Self { country: country.clone(), regions, months };
        panel.validate()?;
        Ok(panel)
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.months {
            if m.regions.len() != self.regions.len() {
                return Err(Error::Validation(format!("{}: period {} has the wrong region count", self.country, m.year)));
            }
            if let Some(n) = m.national {
                if n + 1e-9 < m.observed_sum() {
                    return Err(Error::Validation(format!(
                        "{} {}-{:?}: national total {n} below the subnational sum {}",
                        self.country,
                        m.year,
                        m.month,
                        m.observed_sum()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Historic periods usable for fitting: national total known and at
    /// least one region reporting.
    pub fn fitting_months(&self) -> impl Iterator<Item = &PanelMonth> {
        self.months.iter().filter(|m| m.is_historic() && m.national.is_some() && m.reporting() > 0)
    }

    /// Pandemic periods indexed by month offset 0..24.
    pub fn pandemic_month(&self, offset: usize) -> Option<&PanelMonth> {
        let year = PANDEMIC_START_YEAR + (offset / 12) as i32;
        let month = (offset % 12) as u32 + 1;
        self.months.iter().find(|m| m.year == year && m.month == Some(month))
    }
}
