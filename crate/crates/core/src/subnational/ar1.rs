//! Gaussian AR1 extrapolation of a log(Y/E) series observed with known
//! per-month variances.
//!
//! x_t = μ + u_t, u_t = ρ u_{t−1} + w_t, stationary sd s; observed value
//! x_t + noise with variance v_t. The likelihood comes from a Kalman filter;
//! (μ, atanh ρ, log s) are sampled by componentwise adaptive random-walk
//! Metropolis.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariate::PcPrior;
use crate::error::{Error, Result};
use crate::mcmc::{AdaptiveStep, DiagnosticsTable, McmcConfig};
use crate::rng;
use crate::stats;

pub const MIN_AR1_MONTHS: usize = 12;
const MEAN_PRIOR_SD: f64 = 1.0;

pub fn default_ar1_config() -> McmcConfig {
    McmcConfig { warmup: 2000, draws: 4000, ..McmcConfig::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ar1Tail {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub sd: Vec<f64>,
    /// Predicted log ratios, `[horizon step][draw]`.
    pub log_ratio: Vec<Vec<f64>>,
    pub diagnostics: DiagnosticsTable,
}

impl Ar1Tail {
    /// Y = E · exp(log ratio) for each tail month and draw.
    pub fn back_transform(&self, expected: &[f64]) -> Result<Vec<Vec<f64>>> {
        if expected.len() != self.log_ratio.len() {
            return Err(Error::Misaligned { expected: self.log_ratio.len(), found: expected.len() });
        }
        Ok(self.log_ratio.iter().zip(expected).map(|(r, e)| r.iter().map(|v| e * v.exp()).collect()).collect())
    }
}

#[derive(Clone, Copy, Debug)]
struct Params {
    mu: f64,
    rho: f64,
    sd: f64,
}

impl Params {
    fn from_unconstrained(x: &[f64; 3]) -> Self {
        Self { mu: x[0], rho: x[1].tanh(), sd: x[2].exp() }
    }
}

/// Filtered mean and variance of u_T, plus the log-likelihood.
fn kalman(values: &[f64], variances: &[f64], p: Params) -> (f64, f64, f64) {
    let innovation = p.sd * p.sd * (1.0 - p.rho * p.rho);
    let (mut m, mut var) = (0.0, p.sd * p.sd);
    let mut ll = 0.0;
    for (t, (y, v)) in values.iter().zip(variances).enumerate() {
        if t > 0 {
            m *= p.rho;
            var = p.rho * p.rho * var + innovation;
        }
        let f = var + v;
        let r = y - p.mu - m;
        ll += -0.5 * ((std::f64::consts::TAU * f).ln() + r * r / f);
        let gain = var / f;
        m += gain * r;
        var *= 1.0 - gain;
    }
    (m, var.max(0.0), ll)
}

struct Ar1Model<'a> {
    values: &'a [f64],
    variances: &'a [f64],
    sd_prior: PcPrior,
}

impl Ar1Model<'_> {
    fn log_post(&self, x: &[f64; 3]) -> f64 {
        let p = Params::from_unconstrained(x);
        let (_, _, ll) = kalman(self.values, self.variances, p);
        let rho_jacobian = (1.0 - p.rho * p.rho).max(1e-300).ln();
        ll - 0.5 * (p.mu / MEAN_PRIOR_SD).powi(2) + rho_jacobian + self.sd_prior.ln_density(p.sd) + x[2]
    }

    fn run_chain<R: Rng>(&self, rng: &mut R, config: &McmcConfig) -> [Vec<f64>; 3] {
        let mut x = [
            stats::mean(self.values) + 0.05 * stats::std_normal(rng),
            rng.random_range(-0.5..0.5),
            (stats::sample_sd(self.values).max(1e-3) * rng.random_range(0.5..1.5)).ln(),
        ];
        let mut lp = self.log_post(&x);
        let mut steps = [AdaptiveStep::new(0.1, 0.44), AdaptiveStep::new(0.3, 0.44), AdaptiveStep::new(0.3, 0.44)];
        let mut trace = [Vec::with_capacity(config.draws), Vec::with_capacity(config.draws), Vec::with_capacity(config.draws)];
        for it in 0..config.warmup + config.draws {
            let adapt = it < config.warmup;
            for j in 0..3 {
                let mut y = x;
                y[j] += steps[j].scale() * stats::std_normal(rng);
                let lp_y = self.log_post(&y);
                let ok = lp_y.is_finite() && lp_y - lp >= rng.random::<f64>().ln();
                if ok {
                    x = y;
                    lp = lp_y;
                }
                steps[j].record(ok, adapt);
            }
            if !adapt {
                let p = Params::from_unconstrained(&x);
                trace[0].push(p.mu);
                trace[1].push(p.rho);
                trace[2].push(p.sd);
            }
        }
        trace
    }
}

/// Posterior predictive draws of the log ratio for `horizon` months after
/// the end of `values`.
pub fn ar1_tail_extrapolate(
    values: &[f64],
    variances: &[f64],
    horizon: usize,
    config: &McmcConfig,
    seed: u64,
) -> Result<Ar1Tail> {
    if values.len() != variances.len() {
        return Err(Error::Misaligned { expected: values.len(), found: variances.len() });
    }
    if values.iter().chain(variances).any(|v| !v.is_finite()) || variances.iter().any(|v| *v < 0.0) {
        return Err(Error::Validation("AR1 inputs must be finite with non-negative variances".into()));
    }
    if values.len() < MIN_AR1_MONTHS || horizon == 0 {
        return Err(Error::Precondition(format!(
            "AR1 extrapolation needs at least {MIN_AR1_MONTHS} months and a positive horizon (got {} and {horizon})",
            values.len()
        )));
    }
    if config.chains < 2 || config.draws < 4 || config.keep == 0 {
        return Err(Error::Config("need at least 2 chains, 4 draws and 1 kept draw".into()));
    }
    let model = Ar1Model { values, variances, sd_prior: PcPrior::default() };
    let traces: Vec<[Vec<f64>; 3]> = (0..config.chains)
        .into_par_iter()
        .map(|c| model.run_chain(&mut rng::stream(seed, &["ar1", &c.to_string()]), config))
        .collect();
    let mut table = DiagnosticsTable::new(config.rhat_limit, config.ess_min);
    for (j, name) in ["mu", "rho", "sd"].iter().enumerate() {
        table.add(*name, &traces.iter().map(|t| t[j].clone()).collect::<Vec<_>>());
    }

    let keep_per_chain = config.keep.div_ceil(config.chains).min(config.draws);
    let thin = (config.draws / keep_per_chain).max(1);
    let mut out = Ar1Tail { mu: vec![], rho: vec![], sd: vec![], log_ratio: vec![Vec::new(); horizon], diagnostics: table };
    let mut r = rng::stream(seed, &["ar1", "predict"]);
    'chains: for t in &traces {
        for i in (thin - 1..config.draws).step_by(thin).take(keep_per_chain) {
            if out.mu.len() == config.keep {
                break 'chains;
            }
            let p = Params { mu: t[0][i], rho: t[1][i], sd: t[2][i] };
            let (m, var, _) = kalman(values, variances, p);
            let mut u = m + var.sqrt() * stats::std_normal(&mut r);
            let innovation_sd = p.sd * (1.0 - p.rho * p.rho).max(0.0).sqrt();
            for step in out.log_ratio.iter_mut() {
                u = p.rho * u + innovation_sd * stats::std_normal(&mut r);
                step.push(p.mu + u);
            }
            out.mu.push(p.mu);
            out.rho.push(p.rho);
            out.sd.push(p.sd);
        }
    }
    Ok(out)
}
