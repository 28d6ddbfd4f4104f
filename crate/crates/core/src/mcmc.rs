//! Shared MCMC machinery: adaptive proposal scales and convergence
//! diagnostics (split R-hat and effective sample size across chains).

use std::fmt;

use serde::{Deserialize, Serialize};

/// Robbins-Monro adaptation of a random-walk step size on the log scale.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptiveStep {
    pub log_scale: f64,
    pub target: f64,
    accepted: u64,
    proposed: u64,
}

impl AdaptiveStep {
    pub fn new(scale: f64, target: f64) -> Self {
        Self { log_scale: scale.ln(), target, accepted: 0, proposed: 0 }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    /// Record an accept/reject. When `adapt` is set the scale moves toward
    /// the target acceptance rate with a decaying gain.
    pub fn record(&mut self, accepted: bool, adapt: bool) {
        self.proposed += 1;
        if accepted {
            self.accepted += 1;
        }
        if adapt {
            let gain = 1.0 / (self.proposed as f64).powf(0.6);
            let signal = if accepted { 1.0 } else { 0.0 } - self.target;
            self.log_scale = (self.log_scale + 2.0 * gain * signal).clamp(-20.0, 5.0);
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn reset_counts(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }
}

/// Potential scale reduction computed on split chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves = split(chains);
    let m = halves.len() as f64;
    let n = halves.iter().map(Vec::len).min().unwrap_or(0);
    if n < 2 || halves.len() < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = halves.iter().map(|c| crate::stats::mean(&c[..n])).collect();
    let vars: Vec<f64> = halves.iter().map(|c| crate::stats::sample_variance(&c[..n])).collect();
    let grand = crate::stats::mean(&means);
    let nf = n as f64;
    let between = nf / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let within = crate::stats::mean(&vars);
    if within <= 0.0 {
        // Constant chains: converged iff they agree.
        return if between <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (nf - 1.0) / nf * within + between / nf;
    (var_plus / within).sqrt()
}

/// Effective sample size over split chains, using Geyer's initial monotone
/// sequence on the combined autocorrelation estimate.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let halves = split(chains);
    let m = halves.len();
    let n = halves.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 || m == 0 {
        return f64::NAN;
    }
    let nf = n as f64;
    let means: Vec<f64> = halves.iter().map(|c| crate::stats::mean(&c[..n])).collect();
    let vars: Vec<f64> = halves.iter().map(|c| crate::stats::sample_variance(&c[..n])).collect();
    let within = crate::stats::mean(&vars);
    let grand = crate::stats::mean(&means);
    let between = if m > 1 {
        nf / (m as f64 - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>()
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * within + between / nf;
    if var_plus <= 0.0 {
        return (m * n) as f64;
    }
    let autocov = |lag: usize| -> f64 {
        let mut total = 0.0;
        for (c, mu) in halves.iter().zip(&means) {
            let mut acc = 0.0;
            for i in 0..n - lag {
                acc += (c[i] - mu) * (c[i + lag] - mu);
            }
            total += acc / nf;
        }
        total / m as f64
    };
    let rho = |lag: usize| 1.0 - (within - autocov(lag)) / var_plus;

    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = if lag == 0 { 1.0 + rho(1) } else { rho(lag) + rho(lag + 1) };
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum_pairs += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / ((m * n) as f64).log10());
    (m * n) as f64 / tau
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Chain counts, lengths and convergence thresholds for a sampler run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    /// Draws retained (thinned evenly across chains) for prediction.
    pub keep: usize,
    pub rhat_limit: f64,
    pub ess_min: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { chains: 4, warmup: 5000, draws: 5000, keep: 1000, rhat_limit: 1.02, ess_min: 400.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub parameter: String,
    pub rhat: f64,
    pub ess: f64,
    pub passed: bool,
}

/// Per-parameter convergence summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsTable {
    pub rows: Vec<DiagnosticRow>,
    pub rhat_limit: f64,
    pub ess_min: f64,
}

impl DiagnosticsTable {
    pub fn new(rhat_limit: f64, ess_min: f64) -> Self {
        Self { rows: Vec::new(), rhat_limit, ess_min }
    }

    /// Add a scalar parameter given its per-chain traces.
    pub fn add(&mut self, parameter: impl Into<String>, chains: &[Vec<f64>]) {
        let rhat = split_rhat(chains);
        let ess = effective_sample_size(chains);
        let passed = rhat.is_finite() && rhat < self.rhat_limit && ess >= self.ess_min;
        self.rows.push(DiagnosticRow { parameter: parameter.into(), rhat, ess, passed });
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn max_rhat(&self) -> f64 {
        self.rows.iter().map(|r| r.rhat).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.rows.iter().map(|r| r.ess).fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Display for DiagnosticsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>8} {:>10} {:>6}", "parameter", "rhat", "ess", "ok")?;
        for r in &self.rows {
            writeln!(f, "{:<24} {:>8.4} {:>10.1} {:>6}", r.parameter, r.rhat, r.ess, r.passed)?;
        }
        Ok(())
    }
}
