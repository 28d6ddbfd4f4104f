//! Excess deaths per draw and their aggregation into summaries.
//!
//! Every country carries the same number of draws and draw `s` of one
//! country belongs with draw `s` of every other, so group totals are formed
//! per draw before any quantile is taken.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::covariate::CountryDraws;
use crate::data::{Iso3, PopulationTable, ReportedCovidDeaths, PANDEMIC_MONTHS, PANDEMIC_START_YEAR};
use crate::error::{Error, Result};
use crate::stats;

/// Draws are held on this grid, so every partial sum below 2³³ is exact
/// and group totals do not depend on summation order.
pub const DRAW_RESOLUTION: f64 = 1.0 / 1_048_576.0;

fn on_grid(v: f64) -> f64 {
    (v / DRAW_RESOLUTION).round() * DRAW_RESOLUTION
}

/// How rates are annualized, recorded alongside every rate output.
pub const RATE_CONVENTION: &str =
    "excess deaths per 100,000 person-years; person-years = sum over months of interpolated mid-year population / 12";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountryExcess {
    pub country: Iso3,
    /// `[month offset][draw]`.
    pub deaths: Vec<Vec<f64>>,
    pub expected: Vec<Vec<f64>>,
    pub excess: Vec<Vec<f64>>,
}

impl CountryExcess {
    pub fn draws(&self) -> usize {
        self.excess.first().map_or(0, Vec::len)
    }
}

/// δ = Y − E elementwise, per month and draw, after placing Y and E on
/// [`DRAW_RESOLUTION`].
pub fn compute_excess(country: &Iso3, deaths: &[Vec<f64>], expected: &[Vec<f64>]) -> Result<CountryExcess> {
    if deaths.len() != expected.len() {
        return Err(Error::Misaligned { expected: expected.len(), found: deaths.len() });
    }
    let s = expected.first().map_or(0, Vec::len);
    let grid = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> { rows.iter().map(|r| r.iter().map(|v| on_grid(*v)).collect()).collect() };
    let (deaths, expected) = (grid(deaths), grid(expected));
    let mut excess = Vec::with_capacity(deaths.len());
    for (y, e) in deaths.iter().zip(&expected) {
        if y.len() != s || e.len() != s {
            return Err(Error::Misaligned { expected: s, found: if y.len() != s { y.len() } else { e.len() } });
        }
        excess.push(y.iter().zip(e).map(|(a, b)| a - b).collect());
    }
    Ok(CountryExcess { country: country.clone(), deaths, expected, excess })
}

impl TryFrom<&CountryDraws> for CountryExcess {
    type Error = Error;
    fn try_from(d: &CountryDraws) -> Result<Self> {
        compute_excess(&d.country, &d.deaths, &d.expected)
    }
}

/// Aligned excess draws for a set of countries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExcessDraws {
    pub countries: BTreeMap<Iso3, CountryExcess>,
}

impl ExcessDraws {
    pub fn draws(&self) -> usize {
        self.countries.values().next().map_or(0, CountryExcess::draws)
    }

    pub fn insert(&mut self, c: CountryExcess) -> Result<()> {
        if !self.countries.is_empty() && c.draws() != self.draws() {
            return Err(Error::Misaligned { expected: self.draws(), found: c.draws() });
        }
        if c.excess.len() != PANDEMIC_MONTHS {
            return Err(Error::Misaligned { expected: PANDEMIC_MONTHS, found: c.excess.len() });
        }
        self.countries.insert(c.country.clone(), c);
        Ok(())
    }

    fn get(&self, c: &Iso3) -> Result<&CountryExcess> {
        self.countries.get(c).ok_or_else(|| Error::Precondition(format!("no excess draws for group member {c}")))
    }

    /// Per-draw total of δ over `members` and the months in `period`.
    pub fn group_total(&self, members: &[Iso3], period: Period) -> Result<Vec<f64>> {
        let mut total = vec![0.0; self.draws()];
        for c in members {
            let ce = self.get(c)?;
            for t in period.months() {
                for (acc, v) in total.iter_mut().zip(&ce.excess[t]) {
                    *acc += v;
                }
            }
        }
        Ok(total)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Country,
    Region,
    Income,
    Global,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Country, Level::Region, Level::Income, Level::Global];

    pub fn name(&self) -> &'static str {
        match self {
            Level::Country => "country",
            Level::Region => "region",
            Level::Income => "income",
            Level::Global => "global",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Period {
    /// Month offset 0..24.
    Month(usize),
    /// Pandemic year index 0 or 1.
    Year(usize),
    Cumulative,
}

impl Period {
    pub fn months(self) -> std::ops::Range<usize> {
        match self {
            Period::Month(t) => t..t + 1,
            Period::Year(v) => 12 * v..12 * v + 12,
            Period::Cumulative => 0..PANDEMIC_MONTHS,
        }
    }

    pub fn label(self) -> String {
        match self {
            Period::Month(t) => format!("{}-{:02}", PANDEMIC_START_YEAR + (t / 12) as i32, t % 12 + 1),
            Period::Year(v) => format!("{}", PANDEMIC_START_YEAR + v as i32),
            Period::Cumulative => "cumulative".into(),
        }
    }

    pub fn all() -> Vec<Period> {
        let mut v: Vec<Period> = (0..PANDEMIC_MONTHS).map(Period::Month).collect();
        v.extend([Period::Year(0), Period::Year(1), Period::Cumulative]);
        v
    }
}

/// Group keys and members at one level.
pub fn groups(level: Level, countries: &[Iso3], pop: &PopulationTable) -> Result<BTreeMap<String, Vec<Iso3>>> {
    let mut out: BTreeMap<String, Vec<Iso3>> = BTreeMap::new();
    for c in countries {
        let key = match level {
            Level::Country => c.to_string(),
            Level::Region => pop.region(c)?.code().to_string(),
            Level::Income => pop.info(c)?.income.code().to_string(),
            Level::Global => "global".to_string(),
        };
        out.entry(key).or_default().push(c.clone());
    }
    Ok(out)
}

/// Members of one named group; unknown keys are an error.
pub fn group_members(level: Level, key: &str, countries: &[Iso3], pop: &PopulationTable) -> Result<Vec<Iso3>> {
    groups(level, countries, pop)?
        .remove(key)
        .ok_or_else(|| Error::Validation(format!("unknown {} group `{key}`", level.name())))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointEstimate {
    #[default]
    Median,
    Mean,
}

/// Point estimate with nested 50/80/95% equal-tailed intervals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub point: f64,
    pub lo50: f64,
    pub hi50: f64,
    pub lo80: f64,
    pub hi80: f64,
    pub lo95: f64,
    pub hi95: f64,
}

impl Summary {
    pub fn of(draws: &[f64], point: PointEstimate) -> Self {
        let s = stats::sorted(draws);
        let q = |p: f64| stats::quantile_sorted(&s, p);
        let p = match point {
            PointEstimate::Median => q(0.5),
            PointEstimate::Mean => stats::mean(draws),
        };
        Self {
            point: p,
            lo50: q(0.25),
            hi50: q(0.75),
            lo80: q(0.10),
            hi80: q(0.90),
            lo95: q(0.025),
            hi95: q(0.975),
        }
    }

    pub fn nested(&self) -> bool {
        self.lo95 <= self.lo80 && self.lo80 <= self.lo50 && self.hi50 <= self.hi80 && self.hi80 <= self.hi95
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub level: String,
    pub key: String,
    pub period: String,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Summaries of excess deaths for every group at every level and period.
pub fn summarize(draws: &ExcessDraws, pop: &PopulationTable, point: PointEstimate) -> Result<Vec<SummaryRow>> {
    let countries: Vec<Iso3> = draws.countries.keys().cloned().collect();
    let mut rows = Vec::new();
    for level in Level::ALL {
        for (key, members) in groups(level, &countries, pop)? {
            for period in Period::all() {
                let total = draws.group_total(&members, period)?;
                rows.push(SummaryRow {
                    level: level.name().into(),
                    key: key.clone(),
                    period: period.label(),
                    summary: Summary::of(&total, point),
                });
            }
        }
    }
    Ok(rows)
}

/// Per-draw cumulative excess rate per 100,000 person-years for a group.
pub fn excess_rate(draws: &ExcessDraws, members: &[Iso3], pop: &PopulationTable) -> Result<Vec<f64>> {
    let mut person_years = 0.0;
    for c in members {
        person_years += pop.person_years(c)?;
    }
    if !(person_years > 0.0) {
        return Err(Error::Validation("zero population in excess-rate group".into()));
    }
    Ok(draws.group_total(members, Period::Cumulative)?.into_iter().map(|d| d / person_years * 1e5).collect())
}

/// `probs[i][r]` = P(country i has rank r + 1), rank 1 being the largest value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMatrix {
    pub countries: Vec<Iso3>,
    pub probs: Vec<Vec<f64>>,
}

/// Rank probabilities from aligned draws; ties go to the earlier country code.
pub fn rank_countries(values: &BTreeMap<Iso3, Vec<f64>>) -> Result<RankMatrix> {
    let countries: Vec<Iso3> = values.keys().cloned().collect();
    let n = countries.len();
    let s = values.values().next().map_or(0, Vec::len);
    if let Some(bad) = values.values().find(|v| v.len() != s) {
        return Err(Error::Misaligned { expected: s, found: bad.len() });
    }
    let cols: Vec<&Vec<f64>> = values.values().collect();
    let mut counts = vec![vec![0usize; n]; n];
    let mut order: Vec<usize> = (0..n).collect();
    for d in 0..s {
        order.sort_by(|&a, &b| cols[b][d].total_cmp(&cols[a][d]).then(a.cmp(&b)));
        for (rank, &i) in order.iter().enumerate() {
            counts[i][rank] += 1;
        }
    }
    let probs = counts.into_iter().map(|row| row.into_iter().map(|c| c as f64 / s.max(1) as f64).collect()).collect();
    Ok(RankMatrix { countries, probs })
}

/// Per-draw ratio of group excess to group reported COVID-19 deaths;
/// `None` when the reported total is zero or missing.
pub fn ratio_to_reported(
    draws: &ExcessDraws,
    members: &[Iso3],
    reported: &ReportedCovidDeaths,
) -> Result<Option<Vec<f64>>> {
    let mut rep = 0.0;
    for c in members {
        rep += reported.total(c).unwrap_or(0.0);
    }
    if !(rep > 0.0) {
        return Ok(None);
    }
    Ok(Some(draws.group_total(members, Period::Cumulative)?.into_iter().map(|d| d / rep).collect()))
}

/// Rate and reported-ratio summary for one group (cumulative period).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupIndicators {
    pub level: String,
    pub key: String,
    pub rate: Summary,
    /// Absent when the group reported no COVID-19 deaths.
    pub ratio: Option<Summary>,
}

pub fn indicators(
    draws: &ExcessDraws,
    pop: &PopulationTable,
    reported: &ReportedCovidDeaths,
    point: PointEstimate,
) -> Result<Vec<GroupIndicators>> {
    let countries: Vec<Iso3> = draws.countries.keys().cloned().collect();
    let mut out = Vec::new();
    for level in Level::ALL {
        for (key, members) in groups(level, &countries, pop)? {
            let rate = Summary::of(&excess_rate(draws, &members, pop)?, point);
            let ratio = ratio_to_reported(draws, &members, reported)?.map(|r| Summary::of(&r, point));
            if ratio.is_none() {
                log::warn!("{} {key}: no reported COVID-19 deaths; ratio undefined", level.name());
            }
            out.push(GroupIndicators { level: level.name().into(), key, rate, ratio });
        }
    }
    Ok(out)
}

pub fn write_summary_csv(rows: &[SummaryRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "key", "period", "point", "lo50", "hi50", "lo80", "hi80", "lo95", "hi95"])?;
    for r in rows {
        let s = &r.summary;
        let mut rec = vec![r.level.clone(), r.key.clone(), r.period.clone()];
        rec.extend([s.point, s.lo50, s.hi50, s.lo80, s.hi80, s.lo95, s.hi95].iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_indicators_csv(rows: &[GroupIndicators], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "level", "key", "rate_point", "rate_lo95", "rate_hi95", "ratio_point", "ratio_lo95", "ratio_hi95", "ratio_defined",
    ])?;
    for r in rows {
        let f = |v: f64| format!("{v:.6}");
        let (rp, rl, rh) = match &r.ratio {
            Some(s) => (f(s.point), f(s.lo95), f(s.hi95)),
            None => (String::new(), String::new(), String::new()),
        };
        w.write_record([
            r.level.clone(),
            r.key.clone(),
            f(r.rate.point),
            f(r.rate.lo95),
            f(r.rate.hi95),
            rp,
            rl,
            rh,
            r.ratio.is_some().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format rank probabilities: country, rank, probability.
pub fn write_rank_csv(m: &RankMatrix, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["country", "rank", "probability"])?;
    for (c, row) in m.countries.iter().zip(&m.probs) {
        for (r, p) in row.iter().enumerate() {
            w.write_record([c.to_string(), (r + 1).to_string(), format!("{p:.6}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CountryInfo, IncomeGroup, WhoRegion};
    use crate::rng;

    fn iso(s: &str) -> Iso3 {
        s.parse().unwrap()
    }

    fn constant(c: &str, y: f64, e: f64, s: usize) -> CountryExcess {
        compute_excess(&iso(c), &vec![vec![y; s]; 24], &vec![vec![e; s]; 24]).unwrap()
    }

    fn pop(entries: &[(&str, WhoRegion, f64)]) -> PopulationTable {
        PopulationTable {
            countries: entries
                .iter()
                .map(|(c, r, n)| {
                    let info = CountryInfo {
                        region: *r,
                        income: IncomeGroup::LowMiddle,
                        annual_population: [(2020, *n), (2021, *n)].into_iter().collect(),
                    };
                    (iso(c), info)
                })
                .collect(),
        }
    }

    #[test]
    fn excess_arithmetic() {
        let e = constant("AAA", 100.0, 80.0, 5);
        assert!(e.excess.iter().flatten().all(|v| *v == 20.0));
        let z = compute_excess(&iso("AAA"), &[vec![1.0, 2.0]], &[vec![1.0, 2.0]]).unwrap();
        assert!(z.excess[0].iter().all(|v| *v == 0.0));
        assert!(matches!(
            compute_excess(&iso("AAA"), &[vec![1.0, 2.0]], &[vec![1.0]]),
            Err(Error::Misaligned { .. })
        ));
    }

    #[test]
    fn mean_excess_is_mean_deaths_minus_expected() {
        let mut r = rng::stream(1, &["lin"]);
        let y: Vec<Vec<f64>> = (0..24).map(|_| (0..4000).map(|_| stats::poisson(&mut r, 500.0) as f64).collect()).collect();
        let e: Vec<Vec<f64>> = (0..24).map(|_| (0..4000).map(|_| stats::gamma(&mut r, 100.0, 0.25)).collect()).collect();
        let d = compute_excess(&iso("AAA"), &y, &e).unwrap();
        for t in 0..24 {
            let diff = stats::mean(&d.excess[t]);
            let mcse = stats::sample_sd(&d.excess[t]) / 4000f64.sqrt();
            assert!((diff - (500.0 - 400.0)).abs() < 4.0 * mcse);
        }
    }

    #[test]
    fn groups_add_per_draw() {
        let mut draws = ExcessDraws::default();
        draws.insert(constant("AAA", 110.0, 100.0, 10)).unwrap();
        draws.insert(constant("BBB", 90.0, 100.0, 10)).unwrap();
        let p = pop(&[("AAA", WhoRegion::Afro, 1e6), ("BBB", WhoRegion::Afro, 1e6)]);
        let rows = summarize(&draws, &p, PointEstimate::Median).unwrap();
        let afro = rows.iter().find(|r| r.key == "AFRO" && r.period == "cumulative").unwrap();
        assert_eq!(afro.summary.point, 0.0);
        assert_eq!(afro.summary.lo95, afro.summary.hi95);
        assert!(rows.iter().all(|r| r.summary.nested()));
        assert!(matches!(group_members(Level::Region, "WPRO", &[iso("AAA")], &p), Err(Error::Validation(_))));
        assert!(matches!(draws.insert(constant("CCC", 1.0, 1.0, 9)), Err(Error::Misaligned { .. })));
    }

    #[test]
    fn global_is_the_sum_of_regions_and_quantiles_are_not_additive() {
        let mut r = rng::stream(2, &["agg"]);
        let regions = WhoRegion::ALL;
        let mut draws = ExcessDraws::default();
        let mut entries = Vec::new();
        let names: Vec<String> = (0..12).map(|i| format!("C{i:02}")).collect();
        for (i, name) in names.iter().enumerate() {
            let y: Vec<Vec<f64>> =
                (0..24).map(|_| (0..500).map(|_| 1000.0 + 200.0 * stats::std_normal(&mut r).powi(3)).collect()).collect();
            draws.insert(compute_excess(&iso(name), &y, &vec![vec![1000.0; 500]; 24]).unwrap()).unwrap();
            entries.push((name.as_str(), regions[i % 6], 1e6));
        }
        let p = pop(&entries);
        let countries: Vec<Iso3> = draws.countries.keys().cloned().collect();
        let global = draws.group_total(&countries, Period::Cumulative).unwrap();
        let mut by_region = vec![0.0; 500];
        for (_, members) in groups(Level::Region, &countries, &p).unwrap() {
            for (a, v) in by_region.iter_mut().zip(draws.group_total(&members, Period::Cumulative).unwrap()) {
                *a += v;
            }
        }
        assert_eq!(global, by_region);
        let member_q: f64 = countries
            .iter()
            .map(|c| stats::quantile(&draws.group_total(std::slice::from_ref(c), Period::Cumulative).unwrap(), 0.975))
            .sum();
        assert!((stats::quantile(&global, 0.975) - member_q).abs() > 1.0);
    }

    #[test]
    fn rates() {
        let mut draws = ExcessDraws::default();
        // 10,000 excess deaths over 24 months.
        let s = 4;
        let c = compute_excess(&iso("AAA"), &vec![vec![10_000.0 / 24.0; s]; 24], &vec![vec![0.0; s]; 24]).unwrap();
        draws.insert(c).unwrap();
        let p = pop(&[("AAA", WhoRegion::Euro, 1e6)]);
        let rate = excess_rate(&draws, &[iso("AAA")], &p).unwrap();
        assert!(rate.iter().all(|v| (v - 500.0).abs() < 1e-6));
        let p2 = pop(&[("AAA", WhoRegion::Euro, 2e6)]);
        let half = excess_rate(&draws, &[iso("AAA")], &p2).unwrap();
        assert!((half[0] - 250.0).abs() < 1e-6);
        let mut zero = ExcessDraws::default();
        zero.insert(constant("AAA", 5.0, 5.0, 3)).unwrap();
        assert!(excess_rate(&zero, &[iso("AAA")], &p).unwrap().iter().all(|v| *v == 0.0));
        let p0 = pop(&[("AAA", WhoRegion::Euro, 0.0)]);
        assert!(excess_rate(&zero, &[iso("AAA")], &p0).is_err());
    }

    #[test]
    fn rank_probabilities() {
        let mut values = BTreeMap::new();
        values.insert(iso("AAA"), vec![5.0, 6.0, 7.0]);
        values.insert(iso("BBB"), vec![1.0, 2.0, 3.0]);
        let m = rank_countries(&values).unwrap();
        assert_eq!(m.probs, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);

        let mut r = rng::stream(3, &["rank"]);
        let mut values = BTreeMap::new();
        for c in ["AAA", "BBB", "CCC"] {
            values.insert(iso(c), (0..30_000).map(|_| stats::std_normal(&mut r)).collect::<Vec<_>>());
        }
        let m = rank_countries(&values).unwrap();
        for row in &m.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for p in row {
                assert!((p - 1.0 / 3.0).abs() < 4.0 * (2.0f64 / 9.0 / 30_000.0).sqrt());
            }
        }
        for r in 0..3 {
            assert!((m.probs.iter().map(|row| row[r]).sum::<f64>() - 1.0).abs() < 1e-12);
        }

        let mut tied = BTreeMap::new();
        tied.insert(iso("BBB"), vec![1.0]);
        tied.insert(iso("AAA"), vec![1.0]);
        assert_eq!(rank_countries(&tied).unwrap().probs[0], vec![1.0, 0.0]);
    }

    #[test]
    fn reported_ratios() {
        let mut draws = ExcessDraws::default();
        draws.insert(constant("AAA", 275.0 / 24.0, 0.0, 3)).unwrap();
        let mut reported = ReportedCovidDeaths::default();
        reported.counts.insert(iso("AAA"), vec![100.0 / 24.0; 24]);
        let r = ratio_to_reported(&draws, &[iso("AAA")], &reported).unwrap().unwrap();
        assert!(r.iter().all(|v| (v - 2.75).abs() < 1e-6));
        reported.counts.insert(iso("AAA"), vec![275.0 / 24.0; 24]);
        let r = ratio_to_reported(&draws, &[iso("AAA")], &reported).unwrap().unwrap();
        assert!(r.iter().all(|v| (v - 1.0).abs() < 1e-6));
        let empty = ReportedCovidDeaths::default();
        assert!(ratio_to_reported(&draws, &[iso("AAA")], &empty).unwrap().is_none());

        let mut r = rng::stream(4, &["mono"]);
        let mut draws = ExcessDraws::default();
        let y: Vec<Vec<f64>> = (0..24).map(|_| (0..999).map(|_| 50.0 + stats::std_normal(&mut r)).collect()).collect();
        draws.insert(compute_excess(&iso("AAA"), &y, &vec![vec![0.0; 999]; 24]).unwrap()).unwrap();
        reported.counts.insert(iso("AAA"), vec![10.0; 24]);
        let delta = Summary::of(&draws.group_total(&[iso("AAA")], Period::Cumulative).unwrap(), PointEstimate::Median);
        let ratio = Summary::of(&ratio_to_reported(&draws, &[iso("AAA")], &reported).unwrap().unwrap(), PointEstimate::Median);
        for (a, b) in [(delta.point, ratio.point), (delta.lo95, ratio.lo95), (delta.hi95, ratio.hi95)] {
            assert!((a / 240.0 - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fully_observed_interval_collapses_without_expected_uncertainty() {
        let mut r = rng::stream(5, &["tau"]);
        let y = vec![vec![120.0; 2000]; 24];
        let narrow: Vec<Vec<f64>> = (0..24).map(|_| vec![100.0; 2000]).collect();
        let wide: Vec<Vec<f64>> = (0..24).map(|_| (0..2000).map(|_| stats::gamma(&mut r, 50.0, 0.5)).collect()).collect();
        let a = Summary::of(&compute_excess(&iso("AAA"), &y, &narrow).unwrap().excess[0], PointEstimate::Median);
        let b = Summary::of(&compute_excess(&iso("AAA"), &y, &wide).unwrap().excess[0], PointEstimate::Mean);
        assert_eq!(a.lo95, a.hi95);
        assert!(b.hi95 - b.lo95 > 10.0);
    }
}
