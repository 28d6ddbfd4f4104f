//! Negative binomial penalized regression for no-crisis baselines.
//!
//! log mu = f_year(v) + f_month(m), with the annual trend either a P-spline
//! (second-order difference penalty, null space = straight lines) or a plain
//! linear term, and the within-year term a centered cyclic cubic spline.
//! Coefficients are found by penalized IRLS, the overdispersion by profile
//! maximum likelihood, and the smoothing parameters by maximizing the
//! Laplace-approximate restricted marginal likelihood (grid search followed by
//! golden-section refinement on the log scale).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::{CyclicBasis, PSplineBasis};
use crate::data::{
    Granularity, HistoricSeries, Iso3, PandemicMonth, LINEAR_FALLBACK_MONTHS, MIN_HISTORIC_MONTHS,
    PANDEMIC_START_YEAR, PANDEMIC_YEARS,
};
use crate::error::{Error, Result};
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrendKind {
    Spline,
    Linear,
}

/// Number of cyclic basis functions for the within-year term.
pub const SEASONAL_KNOTS: usize = 8;
const MAX_TREND_SEGMENTS: usize = 20;
const PHI_BOUNDS: (f64, f64) = (1e-2, 1e8);
const RIDGE: f64 = 1e-8;
const LOG_LAMBDA_GRID: (f64, f64, f64) = (-6.0, 18.0, 3.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrendBasis {
    Spline(PSplineBasis),
    Linear,
}

/// Log-scale prediction of the mean expected count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogPrediction {
    pub eta: f64,
    pub sigma: f64,
}

/// A fitted baseline model for one country.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedFit {
    pub country: Iso3,
    pub granularity: Granularity,
    pub trend_kind: TrendKind,
    pub first_year: i32,
    pub trend: TrendBasis,
    pub seasonal: Option<CyclicBasis>,
    pub coefficients: Vec<f64>,
    /// Posterior covariance of the coefficients, row-major.
    pub covariance: Vec<f64>,
    /// One smoothing parameter per penalized component (trend first).
    pub smoothing: Vec<f64>,
    pub phi: f64,
    pub log_likelihood: f64,
    pub restricted_log_marginal: f64,
    /// Predictions for t' = 1..=24 (monthly) or v' = 1..=2 (annual).
    pub predictions: Vec<LogPrediction>,
}

/// Options for a single fit. `smoothing` fixes the smoothing parameters
/// instead of selecting them.
#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    pub trend_kind: Option<TrendKind>,
    pub smoothing: Option<Vec<f64>>,
}

struct Design {
    trend: TrendBasis,
    seasonal: Option<CyclicBasis>,
    first_year: i32,
    trend_cols: usize,
}

impl Design {
    fn new(trend_kind: TrendKind, first_year: i32, last_year: i32, monthly: bool) -> Self {
        let pandemic_end = PANDEMIC_START_YEAR + PANDEMIC_YEARS as i32 - 1;
        let hi = ((last_year + PANDEMIC_YEARS as i32).max(pandemic_end) - first_year) as f64;
        let trend = match trend_kind {
            TrendKind::Spline => {
                let segments = (hi.round() as usize).clamp(1, MAX_TREND_SEGMENTS);
                TrendBasis::Spline(PSplineBasis::new(0.0, hi.max(1.0), segments))
            }
            TrendKind::Linear => TrendBasis::Linear,
        };
        let trend_cols = match &trend {
            TrendBasis::Spline(b) => b.len(),
            TrendBasis::Linear => 2,
        };
        let seasonal = monthly.then(|| CyclicBasis::new(12.0, SEASONAL_KNOTS));
        Self { trend, seasonal, first_year, trend_cols }
    }

    fn cols(&self) -> usize {
        self.trend_cols + self.seasonal.as_ref().map_or(0, CyclicBasis::len)
    }

    fn row(&self, year: i32, month: Option<u32>) -> Vec<f64> {
        let u = (year - self.first_year) as f64;
        let mut row = match &self.trend {
            TrendBasis::Spline(b) => b.eval(u),
            TrendBasis::Linear => vec![1.0, u],
        };
        if let Some(s) = &self.seasonal {
            row.extend(s.eval((month.expect("monthly row") - 1) as f64));
        }
        row
    }

    /// Square-root penalty blocks, one per smoothing parameter, embedded in
    /// the full coefficient width. Also returns each block's rank.
    fn penalty_roots(&self) -> Vec<(DMatrix<f64>, usize)> {
        let p = self.cols();
        let mut out = Vec::new();
        if let TrendBasis::Spline(b) = &self.trend {
            let d = b.difference_matrix();
            let mut full = DMatrix::zeros(d.nrows(), p);
            full.view_mut((0, 0), (d.nrows(), d.ncols())).copy_from(&d);
            out.push((full, b.len() - 2));
        }
        if let Some(s) = &self.seasonal {
            let d = s.difference_matrix();
            let mut full = DMatrix::zeros(d.nrows(), p);
            full.view_mut((0, self.trend_cols), (d.nrows(), d.ncols())).copy_from(&d);
            out.push((full, s.len()));
        }
        out
    }
}

struct InnerFit {
    beta: DVector<f64>,
    phi: f64,
    log_lik: f64,
    laml: f64,
    covariance: DMatrix<f64>,
}

fn negbin_log_lik(y: &[f64], eta: &DVector<f64>, phi: f64) -> f64 {
    y.iter().zip(eta.iter()).map(|(&y, &e)| stats::negbin_ln_pmf(y, e.exp(), phi)).sum()
}

fn profile_phi(y: &[f64], eta: &DVector<f64>) -> f64 {
    let (lo, hi) = (PHI_BOUNDS.0.ln(), PHI_BOUNDS.1.ln());
    let best = stats::golden_section(lo, hi, 1e-10, |lp| -negbin_log_lik(y, eta, lp.exp()));
    // The likelihood is often flat toward the Poisson limit; prefer the
    // boundary when it is at least as good.
    let at_best = negbin_log_lik(y, eta, best.exp());
    let at_hi = negbin_log_lik(y, eta, PHI_BOUNDS.1);
    if at_hi >= at_best { PHI_BOUNDS.1 } else { best.exp() }
}

/// Penalized IRLS at fixed smoothing and dispersion, via QR of the
/// augmented least-squares system.
fn pirls(
    x: &DMatrix<f64>,
    y: &[f64],
    roots: &[(DMatrix<f64>, usize)],
    lambdas: &[f64],
    phi: f64,
    beta0: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.nrows();
    let p = x.ncols();
    let pen_rows: usize = roots.iter().map(|(r, _)| r.nrows()).sum::<usize>() + p;
    let mut penalty = DMatrix::zeros(pen_rows, p);
    let mut row = 0;
    for ((root, _), &lambda) in roots.iter().zip(lambdas) {
        penalty.view_mut((row, 0), (root.nrows(), p)).copy_from(&(root * lambda.sqrt()));
        row += root.nrows();
    }
    for j in 0..p {
        penalty[(row + j, j)] = RIDGE.sqrt();
    }
    let s_full = penalty.transpose() * &penalty;
    let objective = |beta: &DVector<f64>| {
        let eta = x * beta;
        negbin_log_lik(y, &eta, phi) - 0.5 * (&penalty * beta).norm_squared()
    };

    let mut beta = beta0.clone();
    let mut current = objective(&beta);
    let max_iter = 200;
    for _ in 0..max_iter {
        let eta = x * &beta;
        let mut a = DMatrix::zeros(n + pen_rows, p);
        let mut b = DVector::zeros(n + pen_rows);
        for i in 0..n {
            let mu = eta[i].exp();
            let w = mu / (1.0 + mu / phi);
            let z = eta[i] + (y[i] - mu) / mu;
            let sw = w.sqrt();
            for j in 0..p {
                a[(i, j)] = sw * x[(i, j)];
            }
            b[i] = sw * z;
        }
        a.view_mut((n, 0), (pen_rows, p)).copy_from(&penalty);
        let qr = a.qr();
        let r = qr.r();
        let qtb = qr.q().transpose() * b;
        let proposal = r
            .solve_upper_triangular(&qtb)
            .ok_or_else(|| Error::Unidentifiable("singular penalized design".into()))?;
        // Step halving keeps the penalized likelihood monotone.
        let mut step = 1.0;
        let mut candidate = proposal.clone();
        let mut value = objective(&candidate);
        while !(value >= current - 1e-12 * current.abs()) && step > 1e-6 {
            step *= 0.5;
            candidate = &beta + (&proposal - &beta) * step;
            value = objective(&candidate);
        }
        let change = (&candidate - &beta).amax();
        beta = candidate;
        current = value;
        if change < 1e-10 * (1.0 + beta.amax()) || step < 1e-6 {
            return Ok((beta, s_full));
        }
    }
    let eta = x * &beta;
    let score = x.transpose()
        * DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let mu = eta[i].exp();
                (y[i] - mu) / (1.0 + mu / phi)
            }),
        )
        - &s_full * &beta;
    Err(Error::NonConvergence {
        what: "penalized IRLS".into(),
        iterations: max_iter,
        gradient_norm: score.norm(),
        last_iterate: beta.as_slice().to_vec(),
    })
}

/// Fit at fixed smoothing parameters, alternating IRLS and the dispersion
/// profile, and evaluate the restricted Laplace marginal likelihood.
fn fit_inner(
    x: &DMatrix<f64>,
    y: &[f64],
    roots: &[(DMatrix<f64>, usize)],
    lambdas: &[f64],
    beta0: &DVector<f64>,
    phi0: f64,
) -> Result<InnerFit> {
    let mut phi = phi0;
    let mut beta = beta0.clone();
    let mut s_full = DMatrix::zeros(x.ncols(), x.ncols());
    for _ in 0..50 {
        let (b, s) = pirls(x, y, roots, lambdas, phi, &beta)?;
        beta = b;
        s_full = s;
        let new_phi = profile_phi(y, &(x * &beta));
        let done = ((new_phi - phi) / phi).abs() < 1e-10;
        phi = new_phi;
        if done {
            break;
        }
    }
    let (beta, _) = pirls(x, y, roots, lambdas, phi, &beta)?;
    let eta = x * &beta;
    let log_lik = negbin_log_lik(y, &eta, phi);
    let mut h = s_full.clone();
    for i in 0..x.nrows() {
        let mu = eta[i].exp();
        let w = mu / (1.0 + mu / phi);
        let xi = x.row(i);
        h += xi.transpose() * xi * w;
    }
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Unidentifiable("penalized Hessian not positive definite".into()))?;
    let log_det_h: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let log_det_s: f64 = roots
        .iter()
        .zip(lambdas)
        .map(|((_, rank), l)| *rank as f64 * l.ln())
        .sum();
    let laml = log_lik - 0.5 * beta.dot(&(&s_full * &beta)) + 0.5 * log_det_s - 0.5 * log_det_h;
    Ok(InnerFit { covariance: chol.inverse(), beta, phi, log_lik, laml })
}

fn starting_beta(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    // Least squares on log(y + 1/2) with a small ridge.
    let z = DVector::from_iterator(y.len(), y.iter().map(|v| (v + 0.5).ln()));
    let p = x.ncols();
    let xtx = x.transpose() * x + DMatrix::identity(p, p) * 1e-6;
    xtx.cholesky().map(|c| c.solve(&(x.transpose() * z))).unwrap_or_else(|| DVector::zeros(p))
}

fn optimize(
    x: &DMatrix<f64>,
    y: &[f64],
    roots: &[(DMatrix<f64>, usize)],
    fixed: Option<&[f64]>,
) -> Result<(InnerFit, Vec<f64>)> {
    let beta0 = starting_beta(x, y);
    let phi0 = 100.0;
    if let Some(lambdas) = fixed {
        if lambdas.len() != roots.len() {
            return Err(Error::Precondition(format!(
                "expected {} smoothing parameters, got {}",
                roots.len(),
                lambdas.len()
            )));
        }
        return Ok((fit_inner(x, y, roots, lambdas, &beta0, phi0)?, lambdas.to_vec()));
    }
    if roots.is_empty() {
        return Ok((fit_inner(x, y, roots, &[], &beta0, phi0)?, vec![]));
    }

    let (lo, hi, step) = LOG_LAMBDA_GRID;
    let grid: Vec<f64> = (0..).map(|i| lo + step * i as f64).take_while(|v| *v <= hi + 1e-9).collect();
    let mut best: Option<(InnerFit, Vec<f64>)> = None;
    let consider = |best: &mut Option<(InnerFit, Vec<f64>)>, rho: Vec<f64>, start: &DVector<f64>, phi: f64| -> Result<()> {
        let lambdas: Vec<f64> = rho.iter().map(|r| r.exp()).collect();
        let fit = fit_inner(x, y, roots, &lambdas, start, phi)?;
        if best.as_ref().is_none_or(|(b, _)| fit.laml > b.laml) {
            *best = Some((fit, rho));
        }
        Ok(())
    };
    let dims = roots.len();
    let mut idx = vec![0usize; dims];
    loop {
        let rho: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
        consider(&mut best, rho, &beta0, phi0)?;
        let mut d = 0;
        while d < dims {
            idx[d] += 1;
            if idx[d] < grid.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == dims {
            break;
        }
    }
    // Coordinate-wise golden-section refinement around the grid optimum.
    for _round in 0..2 {
        for d in 0..dims {
            let (center, start, phi) = {
                let (fit, rho) = best.as_ref().expect("grid evaluated");
                (rho.clone(), fit.beta.clone(), fit.phi)
            };
            let neg_laml = |r: f64| {
                let mut rho = center.clone();
                rho[d] = r;
                let lambdas: Vec<f64> = rho.iter().map(|r| r.exp()).collect();
                fit_inner(x, y, roots, &lambdas, &start, phi).map(|f| -f.laml).unwrap_or(f64::INFINITY)
            };
            let r = stats::golden_section(
                (center[d] - step).max(lo - step),
                (center[d] + step).min(hi + step),
                0.02,
                neg_laml,
            );
            let mut rho = center.clone();
            rho[d] = r;
            consider(&mut best, rho, &start, phi)?;
        }
    }
    let (fit, rho) = best.expect("at least one fit");
    Ok((fit, rho.iter().map(|r| r.exp()).collect()))
}

fn finish(
    country: &Iso3,
    granularity: Granularity,
    trend_kind: TrendKind,
    design: Design,
    fit: InnerFit,
    smoothing: Vec<f64>,
) -> ExpectedFit {
    let mut out = ExpectedFit {
        country: country.clone(),
        granularity,
        trend_kind,
        first_year: design.first_year,
        trend: design.trend,
        seasonal: design.seasonal,
        coefficients: fit.beta.as_slice().to_vec(),
        covariance: fit.covariance.transpose().as_slice().to_vec(),
        smoothing,
        phi: fit.phi,
        log_likelihood: fit.log_lik,
        restricted_log_marginal: fit.laml,
        predictions: Vec::new(),
    };
    out.predictions = match granularity {
        Granularity::Monthly => PandemicMonth::all()
            .map(|t| out.log_prediction_at(t.calendar_year(), Some(t.month())))
            .collect(),
        Granularity::Annual => (0..PANDEMIC_YEARS)
            .map(|v| out.log_prediction_at(PANDEMIC_START_YEAR + v as i32, None))
            .collect(),
    };
    out
}

impl ExpectedFit {
    fn design(&self) -> Design {
        let trend_cols = match &self.trend {
            TrendBasis::Spline(b) => b.len(),
            TrendBasis::Linear => 2,
        };
        Design {
            trend: self.trend.clone(),
            seasonal: self.seasonal.clone(),
            first_year: self.first_year,
            trend_cols,
        }
    }

    /// Log mean and its standard error for an arbitrary calendar period.
    pub fn log_prediction_at(&self, year: i32, month: Option<u32>) -> LogPrediction {
        let design = self.design();
        let month = if design.seasonal.is_some() { month.or(Some(1)) } else { None };
        let row = design.row(year, month);
        let p = row.len();
        let eta: f64 = row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum();
        let mut var = 0.0;
        for i in 0..p {
            for j in 0..p {
                var += row[i] * self.covariance[i * p + j] * row[j];
            }
        }
        LogPrediction { eta, sigma: var.max(0.0).sqrt() }
    }

    /// Within-year component at months 1..=12 (zero for annual fits).
    pub fn seasonal_curve(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        if let Some(s) = &self.seasonal {
            let coef = &self.coefficients[self.coefficients.len() - s.len()..];
            for (m, v) in out.iter_mut().enumerate() {
                *v = s.eval(m as f64).iter().zip(coef).map(|(a, b)| a * b).sum();
            }
        }
        out
    }

    pub fn seasonal_amplitude(&self) -> f64 {
        let c = self.seasonal_curve();
        c.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - c.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Fit the monthly baseline. Fewer than 36 historic months forces a linear
/// annual trend; fewer than 24 is an error.
pub fn fit_monthly_expected(history: &HistoricSeries, trend_kind: TrendKind) -> Result<ExpectedFit> {
    fit_monthly_with(history, &FitOptions { trend_kind: Some(trend_kind), smoothing: None })
}

pub fn fit_monthly_with(history: &HistoricSeries, options: &FitOptions) -> Result<ExpectedFit> {
    if history.granularity != Granularity::Monthly || history.monthly.len() < MIN_HISTORIC_MONTHS {
        return Err(Error::Precondition(format!(
            "{}: monthly baseline needs at least {MIN_HISTORIC_MONTHS} historic months, found {}",
            history.country,
            history.monthly.len()
        )));
    }
    let y: Vec<f64> = history.monthly.values().copied().collect();
    if y.iter().all(|v| *v == 0.0) {
        return Err(Error::Validation(format!("{}: all-zero history", history.country)));
    }
    let mut kind = options.trend_kind.unwrap_or(TrendKind::Spline);
    if history.monthly.len() < LINEAR_FALLBACK_MONTHS {
        kind = TrendKind::Linear;
    }
    let years = history.span();
    let design = Design::new(kind, years[0], *years.last().expect("non-empty"), true);
    let rows: Vec<Vec<f64>> = history.monthly.keys().map(|&(yr, m)| design.row(yr, Some(m))).collect();
    let x = DMatrix::from_fn(rows.len(), design.cols(), |i, j| rows[i][j]);
    let roots = design.penalty_roots();
    let (fit, smoothing) = optimize(&x, &y, &roots, options.smoothing.as_deref())?;
    Ok(finish(&history.country, Granularity::Monthly, kind, design, fit, smoothing))
}

/// Fit the annual-total baseline. Three or more years use a spline trend,
/// two years a line; fewer is an error.
pub fn fit_annual_expected(history: &HistoricSeries) -> Result<ExpectedFit> {
    fit_annual_with(history, &FitOptions::default())
}

pub fn fit_annual_with(history: &HistoricSeries, options: &FitOptions) -> Result<ExpectedFit> {
    let totals: Vec<(i32, f64)> = if history.annual.is_empty() {
        // Complete monthly years can stand in for annual totals.
        let mut by_year: std::collections::BTreeMap<i32, (usize, f64)> = Default::default();
        for (&(y, _), &d) in &history.monthly {
            let e = by_year.entry(y).or_default();
            e.0 += 1;
            e.1 += d;
        }
        by_year.into_iter().filter(|(_, (n, _))| *n == 12).map(|(y, (_, d))| (y, d)).collect()
    } else {
        history.annual.iter().map(|(y, d)| (*y, *d)).collect()
    };
    if totals.len() < 2 {
        return Err(Error::Precondition(format!(
            "{}: annual baseline needs at least 2 years, found {}",
            history.country,
            totals.len()
        )));
    }
    let y: Vec<f64> = totals.iter().map(|(_, d)| *d).collect();
    if y.iter().all(|v| *v == 0.0) {
        return Err(Error::Validation(format!("{}: all-zero history", history.country)));
    }
    let mut kind = options.trend_kind.unwrap_or(TrendKind::Spline);
    if totals.len() < 3 {
        kind = TrendKind::Linear;
    }
    let design = Design::new(kind, totals[0].0, totals.last().expect("non-empty").0, false);
    let x = DMatrix::from_fn(totals.len(), design.cols(), |i, j| design.row(totals[i].0, None)[j]);
    let roots = design.penalty_roots();
    let (fit, smoothing) = optimize(&x, &y, &roots, options.smoothing.as_deref())?;
    Ok(finish(&history.country, Granularity::Annual, kind, design, fit, smoothing))
}

/// Stored prediction for pandemic month t' (monthly fits) or pandemic year
/// v' (annual fits).
pub fn predict_log_expected(fit: &ExpectedFit, period: usize) -> Result<LogPrediction> {
    let allowed = fit.predictions.len();
    if !(1..=allowed).contains(&period) {
        return Err(Error::Range {
            what: match fit.granularity {
                Granularity::Monthly => "pandemic month",
                Granularity::Annual => "pandemic year",
            },
            value: period as i64,
            allowed: format!("1..={allowed}"),
        });
    }
    Ok(fit.predictions[period - 1])
}
