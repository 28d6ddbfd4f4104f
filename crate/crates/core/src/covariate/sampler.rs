//! Posterior sampling for the hierarchical negative binomial model.
//!
//! State: coefficients ω (intercept, constants, overall effects, zero-sum
//! RW2 paths), one latent log relative risk η per observed cell with
//! η ~ N(Dω, σ_ε²), and the scales σ_ε and σ_β per path.
//!
//! Each sweep draws ω | η exactly from its Gaussian full conditional, with
//! the zero-sum constraints imposed by conditioning; updates every η by an
//! independence Metropolis step with a Laplace-fitted Student-t proposal;
//! updates log σ_ε by adaptive random-walk Metropolis; updates each log σ_β
//! with its path integrated out and then redraws that path; and applies a
//! joint rescaling of each path and its scale.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spec::{DesignRow, Layout, ModelSpec};
use crate::data::{CovariatePanel, Iso3, MortalitySeries, PandemicMonth, PANDEMIC_MONTHS};
use crate::error::{Error, Result};
use crate::gamma::ExpectedDistribution;
use crate::mcmc::{AdaptiveStep, DiagnosticsTable, McmcConfig};
use crate::rng;
use crate::stats::{self, POISSON_LIMIT_SHAPE};

const PATH_DIM: f64 = (PANDEMIC_MONTHS - 1) as f64;
/// Precision of the (otherwise flat) prior along the mean of each path;
/// it has no effect once the path is constrained to sum to zero.
const PATH_MEAN_PRECISION: f64 = 1.0;
/// Small ridge on path coefficients keeping the linear direction proper.
const PATH_RIDGE: f64 = 1e-6;
const PROPOSAL_DOF: f64 = 6.0;

/// An observed country-month entering the likelihood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedCell {
    pub country: Iso3,
    pub t: PandemicMonth,
    pub y: f64,
    pub e_hat: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub spec: ModelSpec,
    pub cells: Vec<ObservedCell>,
    /// One coefficient vector per retained draw.
    pub coefficients: Vec<Vec<f64>>,
    pub sigma_eps: Vec<f64>,
    pub sigma_beta: Vec<Vec<f64>>,
    /// Per retained draw, the overdispersion effect of every observed cell.
    pub eps: Vec<Vec<f64>>,
    pub diagnostics: DiagnosticsTable,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn layout(&self) -> Layout {
        Layout::of(&self.spec)
    }

    pub fn alpha(&self, s: usize) -> f64 {
        self.coefficients[s][0]
    }

    /// Draws of a fixed-effect column (0 is the intercept).
    pub fn fixed_effect(&self, j: usize) -> Vec<f64> {
        self.coefficients.iter().map(|c| c[j]).collect()
    }

    pub fn path(&self, s: usize, b: usize) -> &[f64] {
        let l = self.layout();
        &self.coefficients[s][l.path(b, 0)..l.path(b, 0) + PANDEMIC_MONTHS]
    }

    pub fn cell_index(&self) -> BTreeMap<(Iso3, PandemicMonth), usize> {
        self.cells.iter().enumerate().map(|(i, c)| ((c.country.clone(), c.t), i)).collect()
    }
}

/// Observed cells for countries with any national monthly data.
pub fn observed_cells(
    series: &[MortalitySeries],
    expected: &BTreeMap<Iso3, ExpectedDistribution>,
) -> Result<Vec<ObservedCell>> {
    let mut cells = Vec::new();
    for s in series {
        for t in PandemicMonth::all() {
            let Some(y) = s.observed(t) else { continue };
            let e = expected.get(&s.country).ok_or_else(|| {
                Error::Precondition(format!("{}: no expected-count distribution for an observed country", s.country))
            })?;
            let g = e.get(t);
            cells.push(ObservedCell { country: s.country.clone(), t, y, e_hat: g.mean, tau: g.shape });
        }
    }
    Ok(cells)
}

pub fn fit_model(
    series: &[MortalitySeries],
    expected: &BTreeMap<Iso3, ExpectedDistribution>,
    panel: &CovariatePanel,
    spec: &ModelSpec,
    config: &McmcConfig,
    seed: u64,
) -> Result<PosteriorDraws> {
    fit_cells(observed_cells(series, expected)?, panel, spec, config, seed)
}

pub fn fit_cells(
    cells: Vec<ObservedCell>,
    panel: &CovariatePanel,
    spec: &ModelSpec,
    config: &McmcConfig,
    seed: u64,
) -> Result<PosteriorDraws> {
    spec.validate(panel)?;
    let countries: std::collections::BTreeSet<&Iso3> = cells.iter().map(|c| &c.country).collect();
    if countries.len() < 2 {
        return Err(Error::Precondition(format!(
            "the covariate model needs at least 2 observed countries, found {}",
            countries.len()
        )));
    }
    for c in &cells {
        if !(c.e_hat > 0.0 && c.tau > 0.0 && c.y >= 0.0) {
            return Err(Error::Precondition(format!(
                "{} t={}: expected mean and shape must be positive",
                c.country, c.t
            )));
        }
    }
    if config.chains < 2 || config.draws < 4 || config.keep == 0 {
        return Err(Error::Config("need at least 2 chains, 4 draws and 1 kept draw".into()));
    }
    let rows: Vec<DesignRow> =
        cells.iter().map(|c| spec.design_row(panel, &c.country, c.t)).collect::<Result<_>>()?;
    let model = Model::new(spec, &cells, rows);

    let keep_per_chain = config.keep.div_ceil(config.chains).min(config.draws);
    let thin = (config.draws / keep_per_chain).max(1);
    let outputs: Vec<Result<ChainOutput>> = (0..config.chains)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, &["covariate", "chain", &k.to_string()]);
            model.run_chain(&mut r, config, thin, keep_per_chain)
        })
        .collect();
    let outputs: Vec<ChainOutput> = outputs.into_iter().collect::<Result<_>>()?;

    let layout = Layout::of(spec);
    let mut table = DiagnosticsTable::new(config.rhat_limit, config.ess_min);
    for (j, name) in layout.fixed_names(spec).iter().enumerate() {
        let chains: Vec<Vec<f64>> = outputs.iter().map(|o| o.trace_fixed[j].clone()).collect();
        table.add(name.clone(), &chains);
    }
    table.add("sigma_eps", &outputs.iter().map(|o| o.trace_sigma_eps.clone()).collect::<Vec<_>>());
    for (b, term) in spec.time_varying.iter().enumerate() {
        let chains: Vec<Vec<f64>> = outputs.iter().map(|o| o.trace_sigma_beta[b].clone()).collect();
        table.add(format!("sigma_beta[{}]", term.label()), &chains);
    }
    if !table.passed() {
        return Err(Error::Diagnostics(table));
    }

    let mut draws = PosteriorDraws {
        spec: spec.clone(),
        cells,
        coefficients: Vec::new(),
        sigma_eps: Vec::new(),
        sigma_beta: Vec::new(),
        eps: Vec::new(),
        diagnostics: table,
    };
    for o in outputs {
        draws.coefficients.extend(o.kept_coefficients);
        draws.sigma_eps.extend(o.kept_sigma_eps);
        draws.sigma_beta.extend(o.kept_sigma_beta);
        draws.eps.extend(o.kept_eps);
    }
    draws.coefficients.truncate(config.keep);
    draws.sigma_eps.truncate(config.keep);
    draws.sigma_beta.truncate(config.keep);
    draws.eps.truncate(config.keep);
    Ok(draws)
}

struct Model {
    layout: Layout,
    y: Vec<f64>,
    log_e: Vec<f64>,
    tau: Vec<f64>,
    rows: Vec<DesignRow>,
    dtd: DMatrix<f64>,
    rw2: DMatrix<f64>,
    /// Positive eigenvalues of the RW2 structure matrix.
    rw2_eigenvalues: Vec<f64>,
    fixed_precision: f64,
    sigma_eps_rate: f64,
    sigma_beta_rate: f64,
}

struct ChainOutput {
    trace_fixed: Vec<Vec<f64>>,
    trace_sigma_eps: Vec<f64>,
    trace_sigma_beta: Vec<Vec<f64>>,
    kept_coefficients: Vec<Vec<f64>>,
    kept_sigma_eps: Vec<f64>,
    kept_sigma_beta: Vec<Vec<f64>>,
    kept_eps: Vec<Vec<f64>>,
}

struct State {
    omega: Vec<f64>,
    eta: Vec<f64>,
    /// Linear predictor Dω per cell.
    mean: Vec<f64>,
    sigma_eps: f64,
    sigma_beta: Vec<f64>,
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Second-difference structure matrix for one path.
pub(crate) fn rw2_structure(n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::zeros(n - 2, n);
    for i in 0..n - 2 {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -2.0;
        d[(i, i + 2)] = 1.0;
    }
    d.transpose() * d
}

/// Prior precision of one path at scale σ, before the zero-sum
/// conditioning: K/σ² + c·11ᵀ + ridge·I.
fn path_prior_precision(rw2: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let w = 1.0 / (sigma * sigma);
    DMatrix::from_fn(PANDEMIC_MONTHS, PANDEMIC_MONTHS, |i, j| {
        w * rw2[(i, j)] + PATH_MEAN_PRECISION + if i == j { PATH_RIDGE } else { 0.0 }
    })
}

/// Log normalizing constant of the zero-sum path prior at scale σ, up to a
/// constant, from the positive eigenvalues of the structure matrix. The
/// structure matrix, 11ᵀ and I share eigenvectors, and the constant
/// direction drops out under the constraint.
fn path_log_normalizer(rw2_eigenvalues: &[f64], sigma: f64) -> f64 {
    let w = 1.0 / (sigma * sigma);
    0.5 * rw2_eigenvalues.iter().map(|l| (w * l + PATH_RIDGE).ln()).sum::<f64>()
}

/// Log of the negative binomial likelihood in η = log θ, up to a constant.
fn cell_log_lik(y: f64, log_e: f64, tau: f64, eta: f64) -> f64 {
    let mu = (log_e + eta).exp();
    if tau >= POISSON_LIMIT_SHAPE {
        y * eta - mu
    } else {
        y * eta - (y + tau) * (mu / tau).ln_1p()
    }
}

impl Model {
    fn new(spec: &ModelSpec, cells: &[ObservedCell], rows: Vec<DesignRow>) -> Self {
        let layout = Layout::of(spec);
        let p = layout.len();
        let mut dtd = DMatrix::zeros(p, p);
        for r in &rows {
            let d = r.dense(&layout);
            let nz: Vec<usize> = (0..p).filter(|&j| d[j] != 0.0).collect();
            for &a in &nz {
                for &b in &nz {
                    dtd[(a, b)] += d[a] * d[b];
                }
            }
        }
        Self {
            layout,
            y: cells.iter().map(|c| c.y).collect(),
            log_e: cells.iter().map(|c| c.e_hat.ln()).collect(),
            tau: cells.iter().map(|c| c.tau).collect(),
            rows,
            dtd,
            rw2: rw2_structure(PANDEMIC_MONTHS),
            rw2_eigenvalues: {
                let mut ev: Vec<f64> = rw2_structure(PANDEMIC_MONTHS).symmetric_eigenvalues().iter().copied().collect();
                ev.sort_by(f64::total_cmp);
                ev.split_off(2)
            },
            fixed_precision: 1.0 / (spec.fixed_effect_sd * spec.fixed_effect_sd),
            sigma_eps_rate: spec.sigma_eps_prior.rate(),
            sigma_beta_rate: spec.sigma_beta_prior.rate(),
        }
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn initial_state<R: Rng>(&self, rng: &mut R) -> State {
        let eta: Vec<f64> = (0..self.n())
            .map(|i| ((self.y[i] + 0.5).ln() - self.log_e[i]) + stats::normal(rng, 0.0, 0.05))
            .collect();
        let sigma_beta = (0..self.layout.terms).map(|_| 0.1 * stats::normal(rng, 0.0, 0.5).exp()).collect();
        let mut s = State {
            omega: vec![0.0; self.layout.len()],
            mean: vec![0.0; self.n()],
            eta,
            sigma_eps: 0.2 * stats::normal(rng, 0.0, 0.5).exp(),
            sigma_beta,
        };
        self.draw_coefficients(rng, &mut s);
        s
    }

    fn update_mean(&self, s: &mut State) {
        for (m, r) in s.mean.iter_mut().zip(&self.rows) {
            *m = r.dot(&s.omega);
        }
    }

    /// Exact Gaussian draw of ω given η and the scales, then conditioning
    /// on every path summing to zero.
    fn draw_coefficients<R: Rng>(&self, rng: &mut R, s: &mut State) {
        let l = &self.layout;
        let p = l.len();
        let inv_var = 1.0 / (s.sigma_eps * s.sigma_eps);
        let mut q = &self.dtd * inv_var;
        for j in 0..l.fixed() {
            q[(j, j)] += self.fixed_precision;
        }
        for b in 0..l.terms {
            let o = l.path(b, 0);
            let w = 1.0 / (s.sigma_beta[b] * s.sigma_beta[b]);
            for i in 0..PANDEMIC_MONTHS {
                for j in 0..PANDEMIC_MONTHS {
                    q[(o + i, o + j)] += w * self.rw2[(i, j)] + PATH_MEAN_PRECISION;
                }
                q[(o + i, o + i)] += PATH_RIDGE;
            }
        }
        let mut rhs = DVector::zeros(p);
        for (r, &eta) in self.rows.iter().zip(&s.eta) {
            for (j, v) in r.fixed.iter().enumerate() {
                rhs[j] += v * eta * inv_var;
            }
            for &(j, v) in &r.path {
                rhs[j] += v * eta * inv_var;
            }
        }
        let chol = q.cholesky().expect("coefficient precision is positive definite");
        let mean = chol.solve(&rhs);
        let z = DVector::from_fn(p, |_, _| stats::std_normal(rng));
        let noise = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("triangular factor is invertible");
        let mut omega = mean + noise;
        if l.terms > 0 {
            let mut a_t = DMatrix::zeros(p, l.terms);
            for b in 0..l.terms {
                for t in 0..PANDEMIC_MONTHS {
                    a_t[(l.path(b, t), b)] = 1.0;
                }
            }
            let w = chol.solve(&a_t);
            let s_mat = a_t.transpose() * &w;
            let violation = a_t.transpose() * &omega;
            let correction = s_mat.cholesky().expect("constraint covariance").solve(&violation);
            omega -= w * correction;
            for b in 0..l.terms {
                let o = l.path(b, 0);
                let m = omega.rows(o, PANDEMIC_MONTHS).sum() / PANDEMIC_MONTHS as f64;
                for t in 0..PANDEMIC_MONTHS {
                    omega[o + t] -= m;
                }
            }
        }
        s.omega = omega.as_slice().to_vec();
        self.update_mean(s);
    }

    /// Independence Metropolis update for each latent η with a Student-t
    /// proposal centered at the conditional mode.
    fn update_latent<R: Rng>(&self, rng: &mut R, s: &mut State) -> usize {
        let prec = 1.0 / (s.sigma_eps * s.sigma_eps);
        let mut accepted = 0;
        for i in 0..self.n() {
            let (y, le, tau, m) = (self.y[i], self.log_e[i], self.tau[i], s.mean[i]);
            let target = |eta: f64| cell_log_lik(y, le, tau, eta) - 0.5 * prec * (eta - m) * (eta - m);
            let curvature = |eta: f64| {
                let mu = (le + eta).exp();
                let lik = if tau >= POISSON_LIMIT_SHAPE { mu } else { (y + tau) * tau * mu / ((tau + mu) * (tau + mu)) };
                lik + prec
            };
            let mut mode = s.eta[i];
            for _ in 0..30 {
                let mu = (le + mode).exp();
                let grad_lik = if tau >= POISSON_LIMIT_SHAPE { y - mu } else { y - (y + tau) * mu / (tau + mu) };
                let grad = grad_lik - prec * (mode - m);
                let step = (grad / curvature(mode)).clamp(-2.0, 2.0);
                mode += step;
                if step.abs() < 1e-10 {
                    break;
                }
            }
            let scale = 1.0 / curvature(mode).sqrt();
            let ln_q = |eta: f64| {
                let u = (eta - mode) / scale;
                -0.5 * (PROPOSAL_DOF + 1.0) * (u * u / PROPOSAL_DOF).ln_1p()
            };
            let chi2 = stats::gamma(rng, PROPOSAL_DOF / 2.0, 0.5);
            let proposal = mode + scale * stats::std_normal(rng) / (chi2 / PROPOSAL_DOF).sqrt();
            let current = s.eta[i];
            let log_ratio = target(proposal) - target(current) + ln_q(current) - ln_q(proposal);
            if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
                s.eta[i] = proposal;
                accepted += 1;
            }
        }
        accepted
    }

    fn update_sigma_eps<R: Rng>(&self, rng: &mut R, s: &mut State, step: &mut AdaptiveStep, adapt: bool) {
        let ss: f64 = s.eta.iter().zip(&s.mean).map(|(e, m)| (e - m) * (e - m)).sum();
        let n = self.n() as f64;
        let rate = self.sigma_eps_rate;
        let target = |l: f64| -n * l - 0.5 * ss * (-2.0 * l).exp() - rate * l.exp() + l;
        for _ in 0..3 {
            let cur = s.sigma_eps.ln();
            let prop = cur + step.scale() * stats::std_normal(rng);
            let ok = rng.random::<f64>().ln() < target(prop) - target(cur);
            if ok {
                s.sigma_eps = prop.exp();
            }
            step.record(ok, adapt);
        }
    }

    /// Per-month data precision and score for path b, with the path removed
    /// from the linear predictor.
    fn path_data(&self, s: &State, b: usize) -> (DVector<f64>, DVector<f64>) {
        let o = self.layout.path(b, 0);
        let prec = 1.0 / (s.sigma_eps * s.sigma_eps);
        let mut d = DVector::zeros(PANDEMIC_MONTHS);
        let mut g = DVector::zeros(PANDEMIC_MONTHS);
        for (i, r) in self.rows.iter().enumerate() {
            let (j, v) = r.path[b];
            let resid = s.eta[i] - s.mean[i] + v * s.omega[j];
            d[j - o] += v * v * prec;
            g[j - o] += v * resid * prec;
        }
        (d, g)
    }

    /// Posterior precision of path b given the data terms, and its factor.
    fn path_posterior(&self, sigma: f64, d: &DVector<f64>) -> Option<Cholesky<f64, Dyn>> {
        let mut q = path_prior_precision(&self.rw2, sigma);
        for t in 0..PANDEMIC_MONTHS {
            q[(t, t)] += d[t];
        }
        q.cholesky()
    }

    /// Log density of log σ_b with path b integrated out, up to a constant.
    fn collapsed_log_sigma(&self, log_sigma: f64, d: &DVector<f64>, g: &DVector<f64>) -> f64 {
        let sigma = log_sigma.exp();
        let Some(chol) = self.path_posterior(sigma, d) else { return f64::NEG_INFINITY };
        let ones = DVector::from_element(PANDEMIC_MONTHS, 1.0);
        let qg = chol.solve(g);
        let q1 = chol.solve(&ones);
        let (sum_var, sum_mean) = (ones.dot(&q1), ones.dot(&qg));
        path_log_normalizer(&self.rw2_eigenvalues, sigma) - 0.5 * log_det(&chol) + 0.5 * g.dot(&qg)
            - 0.5 * sum_var.ln()
            - 0.5 * sum_mean * sum_mean / sum_var
            - self.sigma_beta_rate * sigma
            + log_sigma
    }

    /// Updates σ_b with path b integrated out, then redraws the path given
    /// σ_b under the zero-sum constraint.
    fn update_sigma_beta<R: Rng>(&self, rng: &mut R, s: &mut State, b: usize, step: &mut AdaptiveStep, adapt: bool) {
        let (d, g) = self.path_data(s, b);
        let mut cur = s.sigma_beta[b].ln();
        let mut cur_lp = self.collapsed_log_sigma(cur, &d, &g);
        for _ in 0..3 {
            let prop = cur + step.scale() * stats::std_normal(rng);
            let prop_lp = self.collapsed_log_sigma(prop, &d, &g);
            let ok = prop_lp.is_finite() && (!cur_lp.is_finite() || rng.random::<f64>().ln() < prop_lp - cur_lp);
            if ok {
                cur = prop;
                cur_lp = prop_lp;
            }
            step.record(ok, adapt);
        }
        s.sigma_beta[b] = cur.exp();

        let Some(chol) = self.path_posterior(s.sigma_beta[b], &d) else { return };
        let z = DVector::from_fn(PANDEMIC_MONTHS, |_, _| stats::std_normal(rng));
        let noise = chol.l().transpose().solve_upper_triangular(&z).expect("triangular factor is invertible");
        let mut beta = chol.solve(&g) + noise;
        let ones = DVector::from_element(PANDEMIC_MONTHS, 1.0);
        let q1 = chol.solve(&ones);
        beta -= &q1 * (ones.dot(&beta) / ones.dot(&q1));
        let m = beta.sum() / PANDEMIC_MONTHS as f64;
        beta.add_scalar_mut(-m);

        let o = self.layout.path(b, 0);
        for (i, r) in self.rows.iter().enumerate() {
            let (j, v) = r.path[b];
            s.mean[i] += v * (beta[j - o] - s.omega[j]);
        }
        for t in 0..PANDEMIC_MONTHS {
            s.omega[o + t] = beta[t];
        }
    }

    /// Joint move (β_b, σ_b) → (cβ_b, cσ_b).
    fn rescale_path<R: Rng>(&self, rng: &mut R, s: &mut State, b: usize, step: &mut AdaptiveStep, adapt: bool) {
        let log_c = step.scale() * stats::std_normal(rng);
        let c = log_c.exp();
        let o = self.layout.path(b, 0);
        let prec = 1.0 / (s.sigma_eps * s.sigma_eps);
        let mut delta_lik = 0.0;
        let contrib: Vec<f64> = self
            .rows
            .iter()
            .map(|r| {
                let (j, v) = r.path[b];
                debug_assert!(j >= o && j < o + PANDEMIC_MONTHS);
                v * s.omega[j]
            })
            .collect();
        for i in 0..self.n() {
            let r0 = s.eta[i] - s.mean[i];
            let r1 = r0 - (c - 1.0) * contrib[i];
            delta_lik -= 0.5 * prec * (r1 * r1 - r0 * r0);
        }
        let norm2: f64 = s.omega[o..o + PANDEMIC_MONTHS].iter().map(|v| v * v).sum();
        let sigma = s.sigma_beta[b];
        let delta_prior = path_log_normalizer(&self.rw2_eigenvalues, c * sigma) - path_log_normalizer(&self.rw2_eigenvalues, sigma)
            - self.sigma_beta_rate * sigma * (c - 1.0)
            + log_c
            - 0.5 * PATH_RIDGE * norm2 * (c * c - 1.0);
        let log_ratio = delta_lik + delta_prior + PATH_DIM * log_c;
        let ok = rng.random::<f64>().ln() < log_ratio;
        if ok {
            for t in 0..PANDEMIC_MONTHS {
                s.omega[o + t] *= c;
            }
            s.sigma_beta[b] *= c;
            for i in 0..self.n() {
                s.mean[i] += (c - 1.0) * contrib[i];
            }
        }
        step.record(ok, adapt);
    }

    fn run_chain<R: Rng>(&self, rng: &mut R, config: &McmcConfig, thin: usize, keep: usize) -> Result<ChainOutput> {
        let terms = self.layout.terms;
        let mut s = self.initial_state(rng);
        let mut eps_step = AdaptiveStep::new(0.1, 0.44);
        let mut beta_steps = vec![AdaptiveStep::new(0.3, 0.44); terms];
        let mut rescale_steps = vec![AdaptiveStep::new(0.1, 0.44); terms];
        let fixed = self.layout.fixed();
        let mut out = ChainOutput {
            trace_fixed: vec![Vec::with_capacity(config.draws); fixed],
            trace_sigma_eps: Vec::with_capacity(config.draws),
            trace_sigma_beta: vec![Vec::with_capacity(config.draws); terms],
            kept_coefficients: Vec::new(),
            kept_sigma_eps: Vec::new(),
            kept_sigma_beta: Vec::new(),
            kept_eps: Vec::new(),
        };
        for it in 0..config.warmup + config.draws {
            let adapt = it < config.warmup;
            self.draw_coefficients(rng, &mut s);
            self.update_latent(rng, &mut s);
            self.update_sigma_eps(rng, &mut s, &mut eps_step, adapt);
            for b in 0..terms {
                self.update_sigma_beta(rng, &mut s, b, &mut beta_steps[b], adapt);
                self.rescale_path(rng, &mut s, b, &mut rescale_steps[b], adapt);
            }
            if !s.omega.iter().all(|v| v.is_finite()) || !s.sigma_eps.is_finite() {
                return Err(Error::NonConvergence {
                    what: "covariate model sampler".into(),
                    iterations: it,
                    gradient_norm: f64::NAN,
                    last_iterate: s.omega.clone(),
                });
            }
            if adapt {
                continue;
            }
            let k = it - config.warmup;
            for j in 0..fixed {
                out.trace_fixed[j].push(s.omega[j]);
            }
            out.trace_sigma_eps.push(s.sigma_eps);
            for b in 0..terms {
                out.trace_sigma_beta[b].push(s.sigma_beta[b]);
            }
            if (k + 1) % thin == 0 && out.kept_coefficients.len() < keep {
                out.kept_coefficients.push(s.omega.clone());
                out.kept_sigma_eps.push(s.sigma_eps);
                out.kept_sigma_beta.push(s.sigma_beta.clone());
                out.kept_eps.push(s.eta.iter().zip(&s.mean).map(|(e, m)| e - m).collect());
            }
        }
        Ok(out)
    }
}
