//! Metropolis sampler over monthly national counts constrained to a known
//! annual total.
//!
//! Target: Π_t Binomial(z_t | Y_t, p_t) × Multinomial(Y | Y⁺, a / Σa), where
//! z_t are counts from a surveillance subsystem covering a share p_t of
//! deaths and a_t are monthly anchors. Each move picks K months to lose J
//! deaths and K other months to gain J, so Σ Y = Y⁺ in every state.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const MAX_MOVED_MONTHS: usize = 6;
pub const TARGET_ACCEPTANCE: f64 = 0.45;

/// Deaths moved per selected month.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum JumpSize {
    /// A fixed j > 1 only reaches states congruent to the start modulo j.
    Fixed(u64),
    /// Chosen uniformly from the list at every step.
    Mixture(Vec<u64>),
    /// Uniform on 1..=2m − 1, with the centre m tuned during burn-in toward
    /// [`TARGET_ACCEPTANCE`] and then frozen.
    Auto,
}

/// Coverage of the surveillance subsystem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ShareSource {
    Fixed(Vec<f64>),
    /// Posterior draws of p per month; a new draw is taken every
    /// `refresh_every` iterations.
    Draws(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveillanceData {
    pub counts: Vec<u64>,
    pub shares: ShareSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstrainedConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub jump: JumpSize,
    pub refresh_every: usize,
    /// Iterations per entry of the acceptance-rate trace.
    pub trace_window: usize,
}

impl Default for ConstrainedConfig {
    fn default() -> Self {
        Self {
            iterations: 200_000,
            burn_in: 50_000,
            thin: 100,
            jump: JumpSize::Auto,
            refresh_every: 100,
            trace_window: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedDraws {
    /// Retained states after burn-in.
    pub draws: Vec<Vec<u64>>,
    /// Cumulative acceptance rate at the end of each trace window.
    pub acceptance_trace: Vec<f64>,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    /// Mean jump size after burn-in.
    pub jump_scale: f64,
}

impl ConstrainedDraws {
    pub fn month(&self, t: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[t] as f64).collect()
    }
}

struct Target<'a> {
    log_anchor: Vec<f64>,
    surveillance: Option<&'a [u64]>,
    log_miss: Vec<f64>,
}

impl Target<'_> {
    fn set_shares(&mut self, p: &[f64]) {
        self.log_miss = p.iter().map(|p| (-p).ln_1p()).collect();
    }

    fn cell(&self, t: usize, y: u64) -> f64 {
        let yf = y as f64;
        let mut v = yf * self.log_anchor[t] - ln_gamma(yf + 1.0);
        if let Some(z) = self.surveillance {
            let z = z[t];
            if y < z {
                return f64::NEG_INFINITY;
            }
            let miss = (y - z) as f64;
            v += ln_gamma(yf + 1.0) - ln_gamma(miss + 1.0) + miss * self.log_miss[t];
        }
        v
    }
}

fn check_shares(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n || p.iter().any(|v| !(0.0..1.0).contains(v)) {
        return Err(Error::Validation(format!("surveillance shares must be {n} values in [0, 1)")));
    }
    Ok(())
}

/// Evenly split total, remainder to the earliest months.
pub fn even_start(total: u64, months: usize) -> Vec<u64> {
    let base = total / months as u64;
    let extra = (total % months as u64) as usize;
    (0..months).map(|t| base + u64::from(t < extra)).collect()
}

pub fn constrained_count_mcmc<R: Rng + ?Sized>(
    rng: &mut R,
    total: u64,
    anchors: &[f64],
    surveillance: Option<&SurveillanceData>,
    start: &[u64],
    config: &ConstrainedConfig,
) -> Result<ConstrainedDraws> {
    let n = anchors.len();
    if n < 2 || anchors.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::Validation("anchors must be at least 2 positive values".into()));
    }
    if start.len() != n || start.iter().sum::<u64>() != total {
        return Err(Error::Precondition(format!(
            "starting state must have {n} months summing to the annual total {total}"
        )));
    }
    if config.thin == 0 || config.trace_window == 0 || config.refresh_every == 0 || config.burn_in >= config.iterations {
        return Err(Error::Config("constrained sampler needs positive thin/window/refresh and burn-in < iterations".into()));
    }
    let valid_jump = match &config.jump {
        JumpSize::Fixed(j) => *j > 0,
        JumpSize::Mixture(js) => !js.is_empty() && js.iter().all(|j| *j > 0),
        JumpSize::Auto => true,
    };
    if !valid_jump {
        return Err(Error::Config("jump sizes must be positive".into()));
    }
    let anchor_sum: f64 = anchors.iter().sum();
    let mut target = Target {
        log_anchor: anchors.iter().map(|a| (a / anchor_sum).ln()).collect(),
        surveillance: surveillance.map(|s| s.counts.as_slice()),
        log_miss: vec![0.0; n],
    };
    if let Some(s) = surveillance {
        if s.counts.len() != n {
            return Err(Error::Validation(format!("surveillance counts must cover {n} months")));
        }
        match &s.shares {
            ShareSource::Fixed(p) => {
                check_shares(p, n)?;
                target.set_shares(p);
            }
            ShareSource::Draws(d) => {
                if d.is_empty() {
                    return Err(Error::Validation("no surveillance share draws".into()));
                }
                for p in d {
                    check_shares(p, n)?;
                }
                target.set_shares(&d[rng.random_range(0..d.len())]);
            }
        }
        if s.counts.iter().zip(start).any(|(z, y)| z > y) {
            return Err(Error::Precondition("starting state has fewer deaths than the surveillance counts".into()));
        }
    }

    let max_k = MAX_MOVED_MONTHS.min(n / 2);
    let mut y = start.to_vec();
    let mut cells: Vec<f64> = (0..n).map(|t| target.cell(t, y[t])).collect();
    let mut log_jump: f64 = 0.0;
    let upper = (total.max(1) as f64).ln();
    let mut out = ConstrainedDraws { draws: Vec::new(), acceptance_trace: Vec::new(), acceptance_rate: 0.0, jump_scale: 1.0 };
    let (mut accepted, mut post_accepted) = (0usize, 0usize);
    for it in 0..config.iterations {
        if let Some(SurveillanceData { shares: ShareSource::Draws(d), .. }) = surveillance {
            if it > 0 && it % config.refresh_every == 0 {
                target.set_shares(&d[rng.random_range(0..d.len())]);
                for t in 0..n {
                    cells[t] = target.cell(t, y[t]);
                }
            }
        }
        let j = match &config.jump {
            JumpSize::Fixed(j) => *j,
            JumpSize::Mixture(js) => js[rng.random_range(0..js.len())],
            JumpSize::Auto => {
                let centre = log_jump.exp().round().max(1.0) as u64;
                rng.random_range(1..2 * centre)
            }
        };
        let k = rng.random_range(1..=max_k);
        let picked = index::sample(rng, n, 2 * k);
        let (down, up): (Vec<usize>, Vec<usize>) = {
            let v = picked.into_vec();
            (v[..k].to_vec(), v[k..].to_vec())
        };
        let mut ok = false;
        if down.iter().all(|&t| y[t] >= j) {
            let mut delta = 0.0;
            let mut proposed = Vec::with_capacity(2 * k);
            for &t in &down {
                let c = target.cell(t, y[t] - j);
                delta += c - cells[t];
                proposed.push((t, y[t] - j, c));
            }
            for &t in &up {
                let c = target.cell(t, y[t] + j);
                delta += c - cells[t];
                proposed.push((t, y[t] + j, c));
            }
            if delta.is_finite() && delta >= rng.random::<f64>().ln() {
                for (t, v, c) in proposed {
                    y[t] = v;
                    cells[t] = c;
                }
                ok = true;
            }
        }
        debug_assert_eq!(y.iter().sum::<u64>(), total);
        accepted += usize::from(ok);
        if it < config.burn_in {
            if config.jump == JumpSize::Auto {
                let gain = 1.0 / ((it + 1) as f64).powf(0.6);
                log_jump = (log_jump + 2.0 * gain * (f64::from(u8::from(ok)) - TARGET_ACCEPTANCE)).clamp(0.0, upper);
            }
        } else {
            post_accepted += usize::from(ok);
            if (it - config.burn_in + 1) % config.thin == 0 {
                out.draws.push(y.clone());
            }
        }
        if (it + 1) % config.trace_window == 0 {
            out.acceptance_trace.push(accepted as f64 / (it + 1) as f64);
        }
    }
    out.jump_scale = match &config.jump {
        JumpSize::Fixed(j) => *j as f64,
        JumpSize::Mixture(js) => js.iter().sum::<u64>() as f64 / js.len() as f64,
        JumpSize::Auto => log_jump.exp().round().max(1.0),
    };
    out.acceptance_rate = post_accepted as f64 / (config.iterations - config.burn_in) as f64;
    Ok(out)
}
