use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gamma::{gamma_fit_diagnostic, lognormal_samples, moment_match};
use crate::mcmc::McmcConfig;
use crate::rng;
use crate::stats;
use crate::subnational::{
    constrained_count_mcmc, default_share_config, even_start, fit_share_model, predict_national, reference_share_design,
    simulate_constrained, simulate_share_panel, ConstrainedConfig, ShareSource, SurveillanceData,
};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationSuiteConfig {
    pub seed: u64,
    pub share_replications: usize,
    pub share_missing_cells: usize,
    pub share_fit_periods: usize,
    pub share_mcmc: McmcConfig,
    pub constrained_replications: usize,
    pub constrained: ConstrainedConfig,
    pub gamma_cvs: Vec<f64>,
    pub gamma_samples: usize,
    pub gamma_ks_limit: f64,
}

impl Default for SimulationSuiteConfig {
    fn default() -> Self {
        Self {
            seed: 20_220_101,
            share_replications: 50,
            share_missing_cells: 20,
            share_fit_periods: 18,
            share_mcmc: default_share_config(),
            constrained_replications: 10,
            constrained: ConstrainedConfig::default(),
            gamma_cvs: vec![0.01, 0.05, 0.1, 0.15, 0.2],
            gamma_samples: 100_000,
            gamma_ks_limit: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShareSimReport {
    /// Held-out months inside the 95% interval, per replication.
    pub covered: Vec<usize>,
    pub held_out: usize,
    /// Replications whose fit failed; counted as covering nothing.
    pub failed: Vec<String>,
}

impl ShareSimReport {
    pub fn pooled_coverage(&self) -> f64 {
        self.covered.iter().sum::<usize>() as f64 / (self.covered.len() * self.held_out) as f64
    }

    pub fn replications_with(&self, at_least: usize) -> usize {
        self.covered.iter().filter(|c| **c >= at_least).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedSimReport {
    pub covered: Vec<usize>,
    pub acceptance: Vec<f64>,
    pub acceptance_traces: Vec<Vec<f64>>,
    pub failed: Vec<String>,
}

impl ConstrainedSimReport {
    pub fn median_covered(&self) -> f64 {
        stats::median(&self.covered.iter().map(|c| *c as f64).collect::<Vec<_>>())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaSweepRow {
    pub cv: f64,
    pub ks_distance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSuiteReport {
    pub share: ShareSimReport,
    pub constrained: ConstrainedSimReport,
    pub gamma: Vec<GammaSweepRow>,
    pub checks: Vec<Check>,
}

impl SimulationSuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn share_replication(config: &SimulationSuiteConfig, rep: usize) -> crate::Result<usize> {
    let (alpha, sigma, totals) = reference_share_design();
    let label = rep.to_string();
    let mut r = rng::stream(config.seed, &["sims", "share", &label]);
    let sim = simulate_share_panel(&mut r, &alpha, sigma, &totals, config.share_missing_cells, config.share_fit_periods);
    let fit = fit_share_model(&sim.panel, &config.share_mcmc, rng::child_seed(config.seed, &["sims", "share-fit", &label]))?;
    let mut covered = 0;
    for &t in &sim.held_out {
        let d = predict_national(&mut r, &fit, &sim.panel.months[t])?;
        let truth = sim.totals[t].round();
        covered += usize::from(stats::quantile(&d, 0.025) <= truth && truth <= stats::quantile(&d, 0.975));
    }
    Ok(covered)
}

pub fn run_share_simulation(config: &SimulationSuiteConfig) -> ShareSimReport {
    let results: Vec<crate::Result<usize>> =
        (0..config.share_replications).into_par_iter().map(|rep| share_replication(config, rep)).collect();
    let mut report = ShareSimReport { covered: vec![], held_out: 24 - config.share_fit_periods, failed: vec![] };
    for (rep, res) in results.into_iter().enumerate() {
        match res {
            Ok(c) => report.covered.push(c),
            Err(e) => {
                report.covered.push(0);
                report.failed.push(format!("replication {rep}: {e}"));
            }
        }
    }
    report
}

fn constrained_replication(config: &SimulationSuiteConfig, rep: usize) -> crate::Result<(usize, f64, Vec<f64>)> {
    let mut r = rng::stream(config.seed, &["sims", "constrained", &rep.to_string()]);
    let sim = simulate_constrained(&mut r);
    let surveillance = SurveillanceData { counts: sim.surveillance.clone(), shares: ShareSource::Fixed(sim.shares.clone()) };
    let n = sim.truth.len();
    let out = constrained_count_mcmc(&mut r, sim.total(), &sim.anchors, Some(&surveillance), &even_start(sim.total(), n), &config.constrained)?;
    let covered = (0..n)
        .filter(|&t| {
            let d = out.month(t);
            let y = sim.truth[t] as f64;
            stats::quantile(&d, 0.025) <= y && y <= stats::quantile(&d, 0.975)
        })
        .count();
    Ok((covered, out.acceptance_rate, out.acceptance_trace))
}

pub fn run_constrained_simulation(config: &SimulationSuiteConfig) -> ConstrainedSimReport {
    let results: Vec<_> =
        (0..config.constrained_replications).into_par_iter().map(|rep| constrained_replication(config, rep)).collect();
    let mut report = ConstrainedSimReport { covered: vec![], acceptance: vec![], acceptance_traces: vec![], failed: vec![] };
    for (rep, res) in results.into_iter().enumerate() {
        match res {
            Ok((c, a, trace)) => {
                report.covered.push(c);
                report.acceptance.push(a);
                report.acceptance_traces.push(trace);
            }
            Err(e) => {
                report.covered.push(0);
                report.failed.push(format!("replication {rep}: {e}"));
            }
        }
    }
    report
}

/// KS distance between lognormal samples with the given coefficients of
/// variation and their moment-matched gamma.
pub fn run_gamma_sweep(config: &SimulationSuiteConfig) -> crate::Result<Vec<GammaSweepRow>> {
    config
        .gamma_cvs
        .iter()
        .map(|&cv| {
            let mut r = rng::stream(config.seed, &["sims", "gamma", &cv.to_string()]);
            let sigma = (1.0 + cv * cv).ln().sqrt();
            let samples = lognormal_samples(&mut r, 1000f64.ln(), sigma, config.gamma_samples);
            let ks = gamma_fit_diagnostic(&samples, &moment_match(&samples))?;
            Ok(GammaSweepRow { cv, ks_distance: ks.distance, passed: ks.distance < config.gamma_ks_limit })
        })
        .collect()
}

pub fn run_simulation_suite(config: &SimulationSuiteConfig) -> crate::Result<SimulationSuiteReport> {
    let share = run_share_simulation(config);
    let constrained = run_constrained_simulation(config);
    let gamma = run_gamma_sweep(config)?;
    let at_least = share.held_out.saturating_sub(1);
    let majority = share.replications_with(at_least);
    let accept_ok = !constrained.acceptance.is_empty() && constrained.acceptance.iter().all(|a| (0.3..=0.6).contains(a));
    let checks = vec![
        Check {
            name: "share: majority of replications cover the truth in all but one held-out month".into(),
            passed: 2 * majority > share.covered.len(),
            detail: format!("{majority}/{} replications with >= {at_least}/{}", share.covered.len(), share.held_out),
        },
        Check {
            name: "share: pooled 95% coverage >= 0.88".into(),
            passed: share.pooled_coverage() >= 0.88,
            detail: format!("{:.3}", share.pooled_coverage()),
        },
        Check {
            name: "constrained: median replication covers >= 10 of 12 months".into(),
            passed: constrained.median_covered() >= 10.0,
            detail: format!("median {}", constrained.median_covered()),
        },
        Check {
            name: "constrained: acceptance rate in [0.3, 0.6]".into(),
            passed: accept_ok,
            detail: format!("{:?}", constrained.acceptance.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>()),
        },
        Check {
            name: format!("gamma: KS < {} for every cv", config.gamma_ks_limit),
            passed: gamma.iter().all(|g| g.passed),
            detail: format!("{:?}", gamma.iter().map(|g| (g.cv, g.ks_distance)).collect::<Vec<_>>()),
        },
    ];
    Ok(SimulationSuiteReport { share, constrained, gamma, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_runs_and_reports() {
        let config = SimulationSuiteConfig {
            share_replications: 3,
            constrained_replications: 2,
            constrained: ConstrainedConfig { iterations: 60_000, burn_in: 20_000, thin: 40, ..Default::default() },
            gamma_samples: 20_000,
            ..Default::default()
        };
        let report = run_simulation_suite(&config).unwrap();
        assert_eq!(report.share.covered.len(), 3);
        assert_eq!(report.constrained.covered.len(), 2);
        assert_eq!(report.gamma.len(), config.gamma_cvs.len());
        assert_eq!(report.checks.len(), 5);
        assert!(report.constrained.acceptance_traces.iter().all(|t| !t.is_empty()));
    }

    #[test]
    fn gamma_sweep_meets_the_ks_limit() {
        let rows = run_gamma_sweep(&SimulationSuiteConfig::default()).unwrap();
        assert!(rows.iter().all(|r| r.passed), "{rows:?}");
    }
}
