//! Region-share model: per period t, region k reports with log-odds
//! α_k + e_t against the unreported remainder, e_t ~ N(0, σ_e²). Regions that
//! do not report in a period are lumped with the remainder, so every period
//! contributes a multinomial over its reporting regions plus one lumped cell.
//!
//! Each iteration updates log σ_e by random-walk Metropolis given (α, e),
//! then (α, e) by an independence Metropolis step from a Laplace fit at the
//! conditional mode, then makes a joint move proposing σ_e and (α, e) from the
//! refitted Laplace approximation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::panel::{PanelMonth, SubnationalPanel};
use crate::covariate::PcPrior;
use crate::data::Iso3;
use crate::error::{Error, Result};
use crate::mcmc::{AdaptiveStep, DiagnosticsTable, McmcConfig};
use crate::rng;
use crate::stats;

pub const MIN_FITTING_MONTHS: usize = 12;
pub const ALPHA_PRIOR_SD: f64 = 31.6;
const PROPOSAL_DOF: f64 = 10.0;
/// Fisher scoring converges only linearly when regions are lumped.
const MAX_MODE_ITERATIONS: usize = 500;

pub fn default_share_config() -> McmcConfig {
    McmcConfig { warmup: 1000, draws: 2000, ..McmcConfig::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShareFit {
    pub country: Iso3,
    pub regions: Vec<String>,
    /// Region log-odds per retained draw.
    pub alpha: Vec<Vec<f64>>,
    pub sigma_e: Vec<f64>,
    pub acceptance: f64,
    pub diagnostics: DiagnosticsTable,
}

impl ShareFit {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Probability mass of the regions in `mask` for draw `s` and period effect `e`.
    pub fn reporting_share(&self, s: usize, e: f64, mask: &[bool]) -> f64 {
        let psi: Vec<f64> = self.alpha[s].iter().map(|a| a + e).collect();
        let mut all = vec![0.0];
        all.extend(&psi);
        let ln_d = stats::log_sum_exp(&all);
        let reporting: Vec<f64> = psi.iter().zip(mask).filter(|(_, m)| **m).map(|(p, _)| *p).collect();
        if reporting.is_empty() {
            return 0.0;
        }
        (stats::log_sum_exp(&reporting) - ln_d).exp()
    }
}

/// A fitting period in the form used by the likelihood.
#[derive(Clone, Debug)]
struct Period {
    observed: Vec<(usize, f64)>,
    unobserved: Vec<usize>,
    remainder: f64,
    total: f64,
}

impl Period {
    fn from_month(m: &PanelMonth) -> Self {
        let mut observed = Vec::new();
        let mut unobserved = Vec::new();
        for (k, r) in m.regions.iter().enumerate() {
            match r {
                Some(y) => observed.push((k, *y)),
                None => unobserved.push(k),
            }
        }
        let total = m.national.expect("fitting months carry national totals");
        Self { observed, unobserved, remainder: total - m.observed_sum(), total }
    }

    /// Log-likelihood (up to a constant) given ψ_k = α_k + e.
    fn log_lik(&self, alpha: &[f64], e: f64) -> f64 {
        let mut all = Vec::with_capacity(alpha.len() + 1);
        all.push(0.0);
        all.extend(alpha.iter().map(|a| a + e));
        let ln_d = stats::log_sum_exp(&all);
        let mut ll = -self.total * ln_d;
        for &(k, y) in &self.observed {
            ll += y * (alpha[k] + e);
        }
        if self.remainder > 0.0 {
            let mut lump = vec![0.0];
            lump.extend(self.unobserved.iter().map(|&k| alpha[k] + e));
            ll += self.remainder * stats::log_sum_exp(&lump);
        }
        ll
    }
}

/// Per-period gradient and expected information with respect to ψ.
struct PeriodCurvature {
    grad: Vec<f64>,
    info: DMatrix<f64>,
}

fn curvature(p: &Period, alpha: &[f64], e: f64) -> PeriodCurvature {
    let k = alpha.len();
    let psi: Vec<f64> = alpha.iter().map(|a| a + e).collect();
    let mut all = vec![0.0];
    all.extend(&psi);
    let ln_d = stats::log_sum_exp(&all);
    let q: Vec<f64> = psi.iter().map(|v| (v - ln_d).exp()).collect();
    let mut lump = vec![0.0];
    lump.extend(p.unobserved.iter().map(|&j| psi[j]));
    let pi_lump = (stats::log_sum_exp(&lump) - ln_d).exp();

    let mut grad: Vec<f64> = q.iter().map(|qk| -p.total * qk).collect();
    let mut diag = vec![0.0; k];
    for &(j, y) in &p.observed {
        grad[j] += y;
        diag[j] = q[j];
    }
    let mut v = vec![0.0; k];
    for &j in &p.unobserved {
        grad[j] += p.remainder * q[j] / pi_lump;
        v[j] = q[j];
    }
    let mut info = DMatrix::<f64>::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            info[(a, b)] = p.total * (v[a] * v[b] / pi_lump - q[a] * q[b]);
        }
        info[(a, a)] += p.total * diag[a];
    }
    PeriodCurvature { grad, info }
}

/// Gaussian approximation to (e, α) | σ_e with precision in block form
/// [[D, Bᵀ], [B, A]], D diagonal, factored as L Lᵀ.
struct Laplace {
    mode: Vec<f64>,
    d_sqrt: Vec<f64>,
    l21: DMatrix<f64>,
    l22: DMatrix<f64>,
    /// log |L|, half the log-determinant of the precision.
    log_det: f64,
}

impl Laplace {
    /// Solve Lᵀ x = y in place (`y` ordered α then e, matching the state).
    fn back_substitute(&self, y_alpha: DVector<f64>, y_e: &[f64]) -> Vec<f64> {
        let k = self.l22.nrows();
        let x_alpha = self.l22.transpose().solve_upper_triangular(&y_alpha).expect("positive definite");
        let shift = self.l21.transpose() * &x_alpha;
        let mut x = Vec::with_capacity(k + y_e.len());
        x.extend(x_alpha.iter());
        x.extend(y_e.iter().enumerate().map(|(t, y)| (y - shift[t]) / self.d_sqrt[t]));
        x
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let k = self.l22.nrows();
        let w = stats::gamma(rng, PROPOSAL_DOF / 2.0, PROPOSAL_DOF / 2.0);
        let scale = 1.0 / w.sqrt();
        let z_alpha = DVector::from_fn(k, |_, _| stats::std_normal(rng) * scale);
        let z_e: Vec<f64> = (0..self.d_sqrt.len()).map(|_| stats::std_normal(rng) * scale).collect();
        let dx = self.back_substitute(z_alpha, &z_e);
        let x: Vec<f64> = self.mode.iter().zip(&dx).map(|(m, d)| m + d).collect();
        let lq = self.ln_density(&x);
        (x, lq)
    }

    fn ln_density(&self, x: &[f64]) -> f64 {
        let k = self.l22.nrows();
        let d: Vec<f64> = x.iter().zip(&self.mode).map(|(a, b)| a - b).collect();
        let d_alpha = DVector::from_column_slice(&d[..k]);
        let top = self.l21.transpose() * &d_alpha;
        let mut q = 0.0;
        for t in 0..self.d_sqrt.len() {
            let v = self.d_sqrt[t] * d[k + t] + top[t];
            q += v * v;
        }
        q += (self.l22.transpose() * d_alpha).norm_squared();
        let dim = x.len() as f64;
        self.log_det - 0.5 * (PROPOSAL_DOF + dim) * (1.0 + q / PROPOSAL_DOF).ln()
    }
}

struct ShareModel {
    periods: Vec<Period>,
    regions: usize,
    sigma_prior: PcPrior,
}

impl ShareModel {
    fn log_post(&self, x: &[f64], sigma: f64) -> f64 {
        let k = self.regions;
        let alpha = &x[..k];
        let mut lp: f64 = alpha.iter().map(|a| -0.5 * (a / ALPHA_PRIOR_SD).powi(2)).sum();
        for (t, p) in self.periods.iter().enumerate() {
            let e = x[k + t];
            lp += p.log_lik(alpha, e) - 0.5 * (e / sigma).powi(2);
        }
        lp
    }

    /// Gradient and block precision at `x`, then the Newton step and factor.
    fn newton(&self, x: &[f64], sigma: f64) -> Option<(Vec<f64>, Laplace)> {
        let k = self.regions;
        let n = self.periods.len();
        let alpha = &x[..k];
        let prior_alpha = 1.0 / (ALPHA_PRIOR_SD * ALPHA_PRIOR_SD);
        let prior_e = 1.0 / (sigma * sigma);
        let mut a = DMatrix::<f64>::identity(k, k) * prior_alpha;
        let mut b = DMatrix::<f64>::zeros(k, n);
        let mut d = vec![0.0; n];
        let mut g_alpha = DVector::from_fn(k, |i, _| -alpha[i] * prior_alpha);
        let mut g_e = vec![0.0; n];
        for (t, p) in self.periods.iter().enumerate() {
            let e = x[k + t];
            let c = curvature(p, alpha, e);
            a += &c.info;
            let rows = c.info.column_sum();
            for i in 0..k {
                b[(i, t)] = rows[i];
                g_alpha[i] += c.grad[i];
            }
            d[t] = rows.sum() + prior_e;
            g_e[t] = c.grad.iter().sum::<f64>() - e * prior_e;
        }
        let d_sqrt: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
        let mut l21 = b.clone();
        for t in 0..n {
            for i in 0..k {
                l21[(i, t)] /= d_sqrt[t];
            }
        }
        let schur = &a - &l21 * l21.transpose();
        let l22 = schur.cholesky()?.l();
        let y_e: Vec<f64> = g_e.iter().zip(&d_sqrt).map(|(g, s)| g / s).collect();
        let y_alpha = l22.solve_lower_triangular(&(g_alpha - &l21 * DVector::from_column_slice(&y_e)))?;
        let log_det = d_sqrt.iter().map(|v| v.ln()).sum::<f64>() + l22.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let lap = Laplace { mode: x.to_vec(), d_sqrt, l21, l22, log_det };
        let step = lap.back_substitute(y_alpha, &y_e);
        Some((step, lap))
    }

    fn laplace(&self, start: &[f64], sigma: f64) -> Result<Laplace> {
        let mut x = start.to_vec();
        let mut f = self.log_post(&x, sigma);
        for _ in 0..MAX_MODE_ITERATIONS {
            let (step, _) = self.newton(&x, sigma).ok_or_else(|| self.failure(&x))?;
            let mut h = 1.0;
            let mut next;
            loop {
                next = x.iter().zip(&step).map(|(a, s)| a + h * s).collect::<Vec<_>>();
                let fn_ = self.log_post(&next, sigma);
                if fn_.is_finite() && fn_ >= f - 1e-10 {
                    f = fn_;
                    break;
                }
                h /= 2.0;
                if h < 1e-10 {
                    return Err(self.failure(&x));
                }
            }
            let size = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
            x = next;
            if size * h < 1e-9 {
                let (_, mut lap) = self.newton(&x, sigma).ok_or_else(|| self.failure(&x))?;
                lap.mode = x;
                return Ok(lap);
            }
        }
        Err(self.failure(&x))
    }

    fn failure(&self, x: &[f64]) -> Error {
        Error::NonConvergence {
            what: "region-share mode".into(),
            iterations: MAX_MODE_ITERATIONS,
            gradient_norm: f64::NAN,
            last_iterate: x.to_vec(),
        }
    }

    /// Joint log density of (x, log σ_e).
    fn joint_log_target(&self, x: &[f64], log_sigma: f64) -> f64 {
        let sigma = log_sigma.exp();
        self.log_post(x, sigma) - (self.periods.len() as f64 - 1.0) * log_sigma + self.sigma_prior.ln_density(sigma)
    }

    /// Log density of log σ_e given (α, e), up to a constant.
    fn log_sigma_conditional(&self, x: &[f64], log_sigma: f64) -> f64 {
        let sigma = log_sigma.exp();
        let ss: f64 = x[self.regions..].iter().map(|e| e * e).sum();
        -0.5 * ss / (sigma * sigma) - (self.periods.len() as f64 - 1.0) * log_sigma + self.sigma_prior.ln_density(sigma)
    }

    fn initial(&self) -> Vec<f64> {
        let k = self.regions;
        let mut num = vec![0.0; k];
        let mut den = 0.0;
        for p in &self.periods {
            for &(j, y) in &p.observed {
                num[j] += y;
            }
            den += p.remainder;
        }
        let den = den.max(0.5);
        let mut x: Vec<f64> = num.iter().map(|n| (n.max(0.5) / den).ln()).collect();
        x.extend(std::iter::repeat_n(0.0, self.periods.len()));
        x
    }

    fn run_chain<R: Rng>(&self, rng: &mut R, config: &McmcConfig, thin: usize, keep: usize) -> Result<ChainOutput> {
        let k = self.regions;
        let mut sigma: f64 = 0.1 + 0.4 * rng.random::<f64>();
        let mut lap = self.laplace(&self.initial(), sigma)?;
        let mut x = lap.sample(rng).0;
        let mut step = AdaptiveStep::new(0.3, 0.44);
        let mut sigma_step = AdaptiveStep::new(0.3, 0.44);
        let mut accepted = 0usize;
        let mut out = ChainOutput {
            trace_alpha: vec![Vec::with_capacity(config.draws); k],
            trace_sigma: Vec::with_capacity(config.draws),
            kept_alpha: Vec::new(),
            kept_sigma: Vec::new(),
            accepted: 0,
        };
        for it in 0..config.warmup + config.draws {
            let adapt = it < config.warmup;
            let proposed = sigma.ln() + sigma_step.scale() * stats::std_normal(rng);
            let gain = self.log_sigma_conditional(&x, proposed) - self.log_sigma_conditional(&x, sigma.ln());
            let moved = gain.is_finite() && gain >= rng.random::<f64>().ln();
            sigma_step.record(moved, adapt);
            if moved {
                sigma = proposed.exp();
                lap = self.laplace(&lap.mode, sigma)?;
            }
            let (y, lq_y) = lap.sample(rng);
            let gain = self.log_post(&y, sigma) - self.log_post(&x, sigma) + lap.ln_density(&x) - lq_y;
            if gain.is_finite() && gain >= rng.random::<f64>().ln() {
                x = y;
                accepted += usize::from(!adapt);
            }
            // Joint move: new σ_e, then (α, e) from the Laplace fit at σ_e.
            let log_sigma = sigma.ln() + step.scale() * stats::std_normal(rng);
            let mut ok = false;
            if let Ok(lap_new) = self.laplace(&lap.mode, log_sigma.exp()) {
                let (y, lq_y) = lap_new.sample(rng);
                let gain = self.joint_log_target(&y, log_sigma) - lq_y - self.joint_log_target(&x, sigma.ln())
                    + lap.ln_density(&x);
                if gain.is_finite() && gain >= rng.random::<f64>().ln() {
                    x = y;
                    sigma = log_sigma.exp();
                    lap = lap_new;
                    ok = true;
                }
            }
            step.record(ok, adapt);
            if adapt {
                continue;
            }
            for j in 0..k {
                out.trace_alpha[j].push(x[j]);
            }
            out.trace_sigma.push(sigma);
            let s = it - config.warmup;
            if (s + 1) % thin == 0 && out.kept_alpha.len() < keep {
                out.kept_alpha.push(x[..k].to_vec());
                out.kept_sigma.push(sigma);
            }
        }
        out.accepted = accepted;
        Ok(out)
    }
}

struct ChainOutput {
    trace_alpha: Vec<Vec<f64>>,
    trace_sigma: Vec<f64>,
    kept_alpha: Vec<Vec<f64>>,
    kept_sigma: Vec<f64>,
    accepted: usize,
}

pub fn fit_share_model(panel: &SubnationalPanel, config: &McmcConfig, seed: u64) -> Result<ShareFit> {
    panel.validate()?;
    let months: Vec<&PanelMonth> = panel.fitting_months().collect();
    if months.len() < MIN_FITTING_MONTHS {
        return Err(Error::Precondition(format!(
            "{}: the share model needs at least {MIN_FITTING_MONTHS} historic periods with national totals, found {}",
            panel.country,
            months.len()
        )));
    }
    for (k, name) in panel.regions.iter().enumerate() {
        if !months.iter().any(|m| m.regions[k].is_some()) {
            return Err(Error::Precondition(format!("{}: region `{name}` is never observed historically", panel.country)));
        }
    }
    if config.chains < 2 || config.draws < 4 || config.keep == 0 {
        return Err(Error::Config("need at least 2 chains, 4 draws and 1 kept draw".into()));
    }
    let model = ShareModel {
        periods: months.iter().map(|m| Period::from_month(m)).collect(),
        regions: panel.regions.len(),
        sigma_prior: PcPrior::default(),
    };
    let keep_per_chain = config.keep.div_ceil(config.chains).min(config.draws);
    let thin = (config.draws / keep_per_chain).max(1);
    let country = panel.country.to_string();
    let outputs: Vec<ChainOutput> = (0..config.chains)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, &["share", &country, &c.to_string()]);
            model.run_chain(&mut r, config, thin, keep_per_chain)
        })
        .collect::<Result<_>>()?;

    let mut table = DiagnosticsTable::new(config.rhat_limit, config.ess_min);
    for (j, name) in panel.regions.iter().enumerate() {
        let chains: Vec<Vec<f64>> = outputs.iter().map(|o| o.trace_alpha[j].clone()).collect();
        table.add(format!("alpha[{name}]"), &chains);
    }
    table.add("sigma_e", &outputs.iter().map(|o| o.trace_sigma.clone()).collect::<Vec<_>>());
    if !table.passed() {
        return Err(Error::Diagnostics(table));
    }
    let accepted: usize = outputs.iter().map(|o| o.accepted).sum();
    let mut fit = ShareFit {
        country: panel.country.clone(),
        regions: panel.regions.clone(),
        alpha: Vec::new(),
        sigma_e: Vec::new(),
        acceptance: accepted as f64 / (config.draws * config.chains) as f64,
        diagnostics: table,
    };
    for o in outputs {
        fit.alpha.extend(o.kept_alpha);
        fit.sigma_e.extend(o.kept_sigma);
    }
    fit.alpha.truncate(config.keep);
    fit.sigma_e.truncate(config.keep);
    Ok(fit)
}

/// One draw of the national total: Y₊ = Y₁ + R with R ~ NegBin(Y₁, 1 − p),
/// the number of unreported deaths before Y₁ reported ones.
pub fn national_from_share<R: Rng + ?Sized>(rng: &mut R, reported: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || !reported.is_finite() || reported < 0.0 {
        return Err(Error::Validation(format!("invalid reported count {reported} or share {p}")));
    }
    if p >= 1.0 {
        return Ok(reported);
    }
    if reported <= 0.0 {
        return Err(Error::ImproperPosterior(
            "no deaths reported by any region while the reporting share is below 1; \
             predict this country with the covariate model instead"
                .into(),
        ));
    }
    Ok(reported + stats::negbin_failures(rng, reported, p) as f64)
}

/// Posterior draws of the national total for one pandemic period, with a
/// fresh period effect e ~ N(0, σ_e) per draw.
pub fn predict_national<R: Rng + ?Sized>(rng: &mut R, fit: &ShareFit, month: &PanelMonth) -> Result<Vec<f64>> {
    if month.regions.len() != fit.regions.len() {
        return Err(Error::Validation(format!("{}: period has the wrong region count", fit.country)));
    }
    let mask = month.mask();
    if !mask.iter().any(|m| *m) {
        return Err(Error::Precondition(format!("{}: no region reports in {}-{:?}", fit.country, month.year, month.month)));
    }
    let reported = month.observed_sum();
    (0..fit.len())
        .map(|s| {
            let e = stats::normal(rng, 0.0, fit.sigma_e[s]);
            national_from_share(rng, reported, fit.reporting_share(s, e, &mask))
        })
        .collect()
}
