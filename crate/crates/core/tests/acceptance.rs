//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 2 7`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use excess_core::config::RunConfig;
use excess_core::covariate::{benchmark_factor, fit_cells, simulate_covariate_data, SimulationSettings};
use excess_core::data::{Granularity, HistoricSeries, Iso3};
use excess_core::excess::{group_members, groups, rank_countries, Level, Period};
use excess_core::expected::{fit_monthly_expected, fit_monthly_with, predict_log_expected, FitOptions, TrendKind};
use excess_core::gamma::{lognormal_samples, moment_match};
use excess_core::mcmc::McmcConfig;
use excess_core::pipeline::{self, CacheLocation, Inputs};
use excess_core::seasonal::{fit_groups, month_shares, verify_poisson_trick, SeasonalGroup};
use excess_core::subnational::{
    constrained_count_mcmc, national_from_share, ConstrainedConfig, JumpSize, ShareSource, SurveillanceData,
};
use excess_core::validation::{run_constrained_simulation, run_share_simulation, CvScheme, FoldStatus, SimulationSuiteConfig};
use excess_core::{rng, stats, synth};

struct Outcome {
    checks: Vec<(String, bool)>,
}

impl Outcome {
    fn new() -> Self {
        Self { checks: Vec::new() }
    }

    fn check(&mut self, what: impl Into<String>, ok: bool) {
        let what = what.into();
        println!("    [{}] {what}", if ok { "ok" } else { "FAILED" });
        self.checks.push((what, ok));
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn closed_form_identities(o: &mut Outcome) {
    let mut r = rng::stream(1, &["acceptance", "identities"]);

    let mut worst = 0.0f64;
    for (eta, sigma) in [(3.0, 0.01), (7.0, 0.05), (9.5, 0.2), (0.5, 0.15)] {
        let xs = lognormal_samples(&mut r, eta, sigma, 10_000);
        let g = moment_match(&xs);
        worst = worst.max(rel(g.mean, stats::mean(&xs))).max(rel(g.variance(), stats::sample_variance(&xs)));
    }
    o.check(format!("gamma moment matching reproduces mean and variance (max rel. error {worst:.1e} < 1e-12)"), worst < 1e-12);

    for (y1, p) in [(500.0, 0.5), (120.0, 0.2), (2000.0, 0.85)] {
        let n = 200_000;
        let rem: Vec<f64> =
            (0..n).map(|_| national_from_share(&mut r, y1, p).unwrap() - y1).collect();
        let want = y1 * (1.0 - p) / p;
        let mcse = stats::sample_sd(&rem) / (n as f64).sqrt();
        let z = (stats::mean(&rem) - want) / mcse;
        o.check(format!("NegBin remainder mean for Y1={y1}, p={p}: {:.2} vs {want:.2} (|z| = {:.2} <= 3 MCSE)", stats::mean(&rem), z.abs()), z.abs() <= 3.0);
    }

    let f = benchmark_factor(1000.0, 800.0, 1.1);
    o.check(format!("benchmark factor 1000/(800*1.1) = {f:.6}"), rel(f, 1000.0 / 880.0) < 1e-14);

    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let beta = r.random_range(-0.5..0.5);
        let shift = r.random_range(-50.0..50.0);
        let z: [f64; 12] = std::array::from_fn(|_| r.random_range(-10.0..30.0));
        let (a, b) = (month_shares(beta, &z), month_shares(beta, &z.map(|v| v + shift)));
        worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    o.check(format!("month shares invariant to shifting all temperatures (max diff {worst:.1e})"), worst < 1e-12);

    let values: BTreeMap<Iso3, Vec<f64>> = (0..7)
        .map(|i| {
            let c: Iso3 = format!("R{i:02}").parse().unwrap();
            (c, (0..500).map(|_| stats::normal(&mut r, i as f64 * 0.3, 1.0)).collect())
        })
        .collect();
    let m = rank_countries(&values).unwrap();
    let row_err = m.probs.iter().map(|row| (row.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    let col_err = (0..m.countries.len())
        .map(|k| (m.probs.iter().map(|row| row[k]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    o.check(format!("rank matrix rows and columns sum to 1 (max errors {row_err:.1e}, {col_err:.1e})"), row_err < 1e-12 && col_err < 1e-12);
}

fn poisson_trick(o: &mut Outcome) {
    let mut worst = 0.0f64;
    let mut failures = 0;
    for i in 0..100u64 {
        let mut r = rng::stream(i, &["acceptance", "poisson-trick"]);
        let countries = r.random_range(1..=3usize);
        let years = r.random_range(1..=3usize);
        let months = r.random_range(2..=12usize);
        let groups: Vec<SeasonalGroup> = (0..countries * years)
            .map(|_| SeasonalGroup {
                z: (0..months).map(|_| r.random_range(-10.0..30.0)).collect(),
                y: (0..months).map(|_| r.random_range(5..200) as f64).collect(),
            })
            .collect();
        match verify_poisson_trick(&groups) {
            Ok(rep) => worst = worst.max(rep.difference),
            Err(_) => failures += 1,
        }
    }
    o.check(
        format!("100 random instances: max |beta_poisson - beta_multinomial| = {worst:.2e} < 1e-6 ({failures} fit failures)"),
        worst < 1e-6 && failures == 0,
    );
    let two = [SeasonalGroup { z: vec![0.0, 1.0], y: vec![3.0, 7.0] }];
    let (beta, _) = fit_groups(&two).unwrap();
    let err = (beta - (7.0f64 / 3.0).ln()).abs();
    let trick = verify_poisson_trick(&two).unwrap();
    o.check(
        format!("(3,7) instance: beta = {beta:.10}, |beta - log(7/3)| = {err:.1e}, Poisson route {:.10}", trick.beta_poisson),
        err < 1e-8 && (trick.beta_poisson - (7.0f64 / 3.0).ln()).abs() < 1e-8,
    );
}

fn subnational_simulation(o: &mut Outcome) {
    let report = run_share_simulation(&SimulationSuiteConfig::default());
    for f in &report.failed {
        println!("    {f}");
    }
    let pooled = report.pooled_coverage();
    o.check(
        format!(
            "{} replications x {} held-out totals: pooled 95% coverage {:.3} >= 0.88 ({} failed fits)",
            report.covered.len(),
            report.held_out,
            pooled,
            report.failed.len()
        ),
        report.covered.len() == 50 && pooled >= 0.88,
    );
}

fn constrained_sampler(o: &mut Outcome) {
    let (total, z, p, anchors) = (8u64, [1u64, 2, 1], [0.3, 0.5, 0.4], [1.0, 2.0, 3.0]);
    let a_sum: f64 = anchors.iter().sum();
    let log_target = |y: &[u64]| -> f64 {
        (0..3)
            .map(|t| {
                let yt = y[t] as f64;
                yt * (anchors[t] / a_sum).ln() - stats::ln_choose(yt, 0.0) - ln_factorial(yt)
                    + stats::binomial_ln_pmf(z[t] as f64, yt, p[t])
            })
            .sum()
    };
    let mut exact = BTreeMap::new();
    for a in 0..=total {
        for b in 0..=total - a {
            let y = [a, b, total - a - b];
            let lp = log_target(&y);
            if lp.is_finite() {
                exact.insert(y.to_vec(), lp);
            }
        }
    }
    let lz = stats::log_sum_exp(&exact.values().copied().collect::<Vec<_>>());
    let config = ConstrainedConfig { iterations: 1_000_000, burn_in: 0, thin: 1, jump: JumpSize::Fixed(1), ..Default::default() };
    let s = SurveillanceData { counts: z.to_vec(), shares: ShareSource::Fixed(p.to_vec()) };
    let mut r = rng::stream(7, &["acceptance", "toy"]);
    let out = constrained_count_mcmc(&mut r, total, &anchors, Some(&s), &[3, 3, 2], &config).unwrap();
    let mut visits: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    for d in &out.draws {
        *visits.entry(d.clone()).or_default() += 1.0;
    }
    let n = out.draws.len() as f64;
    let tv = exact.iter().map(|(y, lp)| ((lp - lz).exp() - visits.get(y).copied().unwrap_or(0.0) / n).abs()).sum::<f64>() / 2.0;
    o.check(format!("toy 3-month target ({} states), {} steps: total variation {tv:.4} < 0.01", exact.len(), out.draws.len()), tv < 0.01);

    let report = run_constrained_simulation(&SimulationSuiteConfig::default());
    let median = report.median_covered();
    o.check(
        format!("12-month simulation, {} replications: median months covered {median} >= 10 (per rep {:?})", report.covered.len(), report.covered),
        median >= 10.0 && report.failed.is_empty(),
    );
    let acc: Vec<f64> = report.acceptance.iter().map(|a| (a * 1000.0).round() / 1000.0).collect();
    o.check(
        format!("acceptance rates {acc:?} all in [0.3, 0.6]"),
        !acc.is_empty() && report.acceptance.iter().all(|a| (0.3..=0.6).contains(a)),
    );
}

fn ln_factorial(x: f64) -> f64 {
    stats::ln_choose(x, x) + (1..=x as u64).map(|k| (k as f64).ln()).sum::<f64>()
}

fn covariate_calibration(o: &mut Outcome) {
    let reps = 20;
    let config = McmcConfig::default();
    let (mut covered, mut intervals, mut max_rhat, mut max_sum, mut failed) = (0, 0, 0.0f64, 0.0f64, Vec::new());
    for rep in 0..reps {
        let mut r = rng::stream(rep, &["acceptance", "sbc"]);
        let data = simulate_covariate_data(&mut r, &SimulationSettings::default());
        let draws = match fit_cells(data.cells.clone(), &data.panel, &data.spec, &config, rng::child_seed(rep, &["sbc-fit"])) {
            Ok(d) => d,
            Err(e) => {
                failed.push(format!("rep {rep}: {e}"));
                continue;
            }
        };
        let layout = draws.layout();
        for j in 0..layout.fixed() {
            let d = draws.fixed_effect(j);
            let (lo, hi) = (stats::quantile(&d, 0.025), stats::quantile(&d, 0.975));
            intervals += 1;
            covered += usize::from(lo <= data.truth.coefficients[j] && data.truth.coefficients[j] <= hi);
        }
        for s in 0..draws.len() {
            for b in 0..layout.terms {
                max_sum = max_sum.max(draws.path(s, b).iter().sum::<f64>().abs());
            }
        }
        max_rhat = max_rhat.max(draws.diagnostics.max_rhat());
    }
    for f in &failed {
        println!("    {f}");
    }
    let coverage = covered as f64 / intervals.max(1) as f64;
    o.check(
        format!("{reps} replications x 40 countries: fixed-effect 95% coverage {covered}/{intervals} = {coverage:.3} >= 0.90"),
        failed.is_empty() && coverage >= 0.90,
    );
    o.check(format!("RW2 paths sum to zero in every draw (max |sum| {max_sum:.1e} < 1e-8)"), failed.is_empty() && max_sum < 1e-8);
    o.check(format!("max split R-hat {max_rhat:.4} < 1.02"), failed.is_empty() && max_rhat < 1.02);
}

fn files_identical(a: &Path, b: &Path) -> Vec<String> {
    let mut differ = Vec::new();
    for entry in std::fs::read_dir(a).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            let name = path.file_name().unwrap();
            if std::fs::read(&path).ok() != std::fs::read(b.join(name)).ok() {
                differ.push(name.to_string_lossy().into_owned());
            }
        }
    }
    differ
}

fn synthetic_world(o: &mut Outcome) {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let truth = synth::write_world(dir.path(), 2022).unwrap();
    let config = RunConfig::load(&dir.path().join("run.toml")).unwrap();
    let inputs = Inputs::load(dir.path()).unwrap();

    let first = pipeline::run(&config, dir.path(), &dir.path().join("run1"), CacheLocation::Disabled).unwrap();
    let tiers: std::collections::BTreeSet<&str> = first.metadata.countries.values().map(|r| r.tier.as_str()).collect();
    o.check(format!("{} countries across tiers {tiers:?}", truth.roles.len()), tiers.len() == 4 && truth.roles.len() == 30);

    let report = pipeline::cross_validate(&config, &inputs, &first.covariate, CvScheme::Country).unwrap();
    let skipped: Vec<String> = report
        .folds
        .iter()
        .filter_map(|f| match &f.status {
            FoldStatus::Skipped(why) => Some(format!("{}: {why}", f.fold)),
            FoldStatus::Scored => None,
        })
        .collect();
    for s in &skipped {
        println!("    skipped fold {s}");
    }
    let m = report.metrics;
    o.check(
        format!(
            "leave-one-country-out CV over {} folds, {} cells: 95% coverage {:.1}% within 95 +/- 4 (50%: {:.1}, 80%: {:.1}; {} folds skipped)",
            report.folds.len(),
            m.cells,
            100.0 * m.coverage95,
            100.0 * m.coverage50,
            100.0 * m.coverage80,
            skipped.len()
        ),
        skipped.is_empty() && (0.91..=0.99).contains(&m.coverage95),
    );

    let excess = &first.excess;
    let countries: Vec<Iso3> = excess.countries.keys().cloned().collect();
    let mut additive = true;
    for period in Period::all() {
        let global = excess.group_total(&group_members(Level::Global, "global", &countries, &inputs.population).unwrap(), period).unwrap();
        for level in [Level::Country, Level::Region, Level::Income] {
            let mut sum = vec![0.0; excess.draws()];
            for members in groups(level, &countries, &inputs.population).unwrap().values() {
                for (acc, v) in sum.iter_mut().zip(excess.group_total(members, period).unwrap()) {
                    *acc += v;
                }
            }
            additive &= sum == global;
        }
    }
    let months: Vec<f64> = (0..24).map(|t| excess.group_total(&countries, Period::Month(t)).unwrap()[0]).collect();
    additive &= months.iter().sum::<f64>() == excess.group_total(&countries, Period::Cumulative).unwrap()[0];
    o.check("country, region and income totals add to the global total exactly in every draw and period", additive);

    pipeline::run(&config, dir.path(), &dir.path().join("run2"), CacheLocation::Disabled).unwrap();
    let differ = files_identical(&dir.path().join("run1"), &dir.path().join("run2"));
    o.check(format!("rerun with the same config and seed is byte-identical (differing files: {differ:?})"), differ.is_empty());

    let elapsed = start.elapsed();
    o.check(format!("runtime {:.1} min < 45 min", elapsed.as_secs_f64() / 60.0), elapsed < Duration::from_secs(45 * 60));
}

fn monthly(f: impl Fn(i32, u32) -> f64) -> HistoricSeries {
    let mut m = BTreeMap::new();
    for y in 2015..=2019 {
        for mo in 1..=12 {
            m.insert((y, mo), f(y, mo));
        }
    }
    HistoricSeries { country: "AAA".parse().unwrap(), granularity: Granularity::Monthly, monthly: m, annual: BTreeMap::new() }
}

fn expected_model(o: &mut Outcome) {
    let fit = fit_monthly_expected(&monthly(|_, _| 1000.0), TrendKind::Spline).unwrap();
    let worst = (1..=24).map(|t| (predict_log_expected(&fit, t).unwrap().eta - 1000f64.ln()).abs()).fold(0.0, f64::max);
    o.check(
        format!("constant history: max |eta - log 1000| = {worst:.2e} < 0.01, seasonal amplitude {:.1e}", fit.seasonal_amplitude()),
        worst < 0.01 && fit.seasonal_amplitude() < 0.01,
    );

    let fit = fit_monthly_expected(&monthly(|y, _| 1010.0 + 10.0 * (y - 2015) as f64), TrendKind::Linear).unwrap();
    let mut worst = 0.0f64;
    for t in 1..=24 {
        let want = if t <= 12 { 1060.0 } else { 1070.0 };
        worst = worst.max(rel(predict_log_expected(&fit, t).unwrap().eta.exp(), want));
    }
    o.check(format!("linear history 1010..1050: 2020 -> 1060, 2021 -> 1070 within {:.3}% < 0.5%", 100.0 * worst), worst < 0.005);

    let h = monthly(|y, m| {
        let trend = 800.0 + 4.0 * (y - 2015) as f64 + 3.0 * ((y - 2017) as f64).powi(2);
        let noise = ((y as f64 * 12.9898 + m as f64 * 78.233).sin() * 43758.5453).fract();
        (trend * (1.0 + 0.15 * (m as f64 / 2.0).cos()) * (1.0 + 0.05 * (noise - 0.5))).round()
    });
    let seasonal = 10.0;
    let spline =
        fit_monthly_with(&h, &FitOptions { trend_kind: Some(TrendKind::Spline), smoothing: Some(vec![1e10, seasonal]) }).unwrap();
    let linear = fit_monthly_with(&h, &FitOptions { trend_kind: Some(TrendKind::Linear), smoothing: Some(vec![seasonal]) }).unwrap();
    let worst = (1..=24)
        .map(|t| rel(predict_log_expected(&spline, t).unwrap().eta.exp(), predict_log_expected(&linear, t).unwrap().eta.exp()))
        .fold(0.0, f64::max);
    o.check(format!("trend penalty 1e10: spline vs linear max relative difference {worst:.2e} < 1e-6"), worst < 1e-6);
}

type Criterion = (u32, &'static str, fn(&mut Outcome), Duration);

fn main() {
    let criteria: [Criterion; 7] = [
        (1, "closed-form identities", closed_form_identities, Duration::from_secs(60)),
        (2, "Poisson-trick equivalence", poisson_trick, Duration::from_secs(60)),
        (3, "subnational share simulation", subnational_simulation, Duration::from_secs(10 * 60)),
        (4, "constrained-count sampler", constrained_sampler, Duration::from_secs(10 * 60)),
        (5, "covariate-model calibration", covariate_calibration, Duration::from_secs(30 * 60)),
        (6, "synthetic 30-country world", synthetic_world, Duration::from_secs(45 * 60)),
        (7, "expected-model oracles", expected_model, Duration::from_secs(5 * 60)),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut summary = Vec::new();
    for (id, name, run, limit) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        println!("criterion {id}: {name}");
        let start = Instant::now();
        let mut outcome = Outcome::new();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&mut outcome)));
        let elapsed = start.elapsed();
        if result.is_err() {
            outcome.check("completed without panicking", false);
        }
        outcome.check(format!("runtime {:.1}s within {}s", elapsed.as_secs_f64(), limit.as_secs()), elapsed <= limit);
        summary.push((id, name, outcome.passed()));
    }
    println!();
    for (id, name, passed) in &summary {
        println!("{} criterion {id}: {name}", if *passed { "PASS" } else { "FAIL" });
    }
    if summary.iter().any(|(_, _, p)| !p) {
        std::process::exit(1);
    }
}
