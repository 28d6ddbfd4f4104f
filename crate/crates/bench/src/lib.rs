//! Fixtures shared by the engine benchmarks.

use std::collections::BTreeMap;

use rand::Rng;

use excess_core::data::{Granularity, HistoricSeries};
use excess_core::rng;
use excess_core::seasonal::SeasonalGroup;

/// Five years of monthly deaths with a mild trend, seasonality and noise.
pub fn monthly_history() -> HistoricSeries {
    let mut r = rng::stream(1, &["bench", "history"]);
    let mut monthly = BTreeMap::new();
    for y in 2015..=2019 {
        for m in 1..=12u32 {
            let level = 2000.0 * (1.0 + 0.01 * (y - 2015) as f64) * (1.0 + 0.2 * (m as f64 * 0.52).cos());
            monthly.insert((y, m), (level * (1.0 + r.random_range(-0.03..0.03))).round());
        }
    }
    HistoricSeries { country: "BNC".parse().unwrap(), granularity: Granularity::Monthly, monthly, annual: BTreeMap::new() }
}

/// Country-years of monthly deaths against temperature.
pub fn seasonal_groups(n: usize) -> Vec<SeasonalGroup> {
    let mut r = rng::stream(2, &["bench", "seasonal"]);
    (0..n)
        .map(|_| SeasonalGroup {
            z: (0..12).map(|_| r.random_range(-10.0..30.0)).collect(),
            y: (0..12).map(|_| r.random_range(50..500) as f64).collect(),
        })
        .collect()
}
