//! Small numerical and distributional helpers shared by the models.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal, Poisson};
use statrs::function::gamma::ln_gamma;

/// Gamma shapes above this are treated as "no extra dispersion" when
/// sampling negative binomials.
pub const POISSON_LIMIT_SHAPE: f64 = 1e12;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (denominator n - 1).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0)
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Quantile with linear interpolation between order statistics (the
/// "type 7" definition). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    quantile_sorted(&sorted(xs), q)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    let mut p: Vec<f64> = xs.iter().map(|x| (x - lse).exp()).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    p
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Negative binomial log pmf with mean `mu` and size (overdispersion)
/// `size`, so that var = mu (1 + mu / size).
pub fn negbin_ln_pmf(y: f64, mu: f64, size: f64) -> f64 {
    if size >= POISSON_LIMIT_SHAPE {
        return poisson_ln_pmf(y, mu);
    }
    ln_gamma(y + size) - ln_gamma(size) - ln_gamma(y + 1.0)
        - size * (mu / size).ln_1p()
        + if y > 0.0 { y * (mu / (size + mu)).ln() } else { 0.0 }
}

/// The part of the negative binomial log pmf that depends on the mean.
pub fn negbin_ln_kernel(y: f64, mu: f64, size: f64) -> f64 {
    y * mu.ln() - (y + size) * (mu + size).ln()
}

pub fn poisson_ln_pmf(y: f64, mu: f64) -> f64 {
    if mu == 0.0 {
        return if y == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    y * mu.ln() - mu - ln_gamma(y + 1.0)
}

pub fn ln_choose(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

pub fn binomial_ln_pmf(k: f64, n: f64, p: f64) -> f64 {
    if k < 0.0 || k > n {
        return f64::NEG_INFINITY;
    }
    let mut out = ln_choose(n, k);
    if k > 0.0 {
        out += k * p.ln();
    }
    if n - k > 0.0 {
        out += (n - k) * (1.0 - p).ln();
    }
    out
}

pub fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("finite sd").sample(rng)
}

/// Gamma draw with the given shape and rate.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(rng)
}

pub fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite poisson mean").sample(rng) as u64
}

/// Negative binomial draw with mean `mu` and size `size` via the
/// Poisson-gamma mixture.
pub fn negbin<R: Rng + ?Sized>(rng: &mut R, mu: f64, size: f64) -> u64 {
    if mu <= 0.0 {
        return 0;
    }
    if size >= POISSON_LIMIT_SHAPE {
        return poisson(rng, mu);
    }
    let lambda = gamma(rng, size, size / mu);
    poisson(rng, lambda)
}

/// Number of failures before `successes` successes with success
/// probability `p`: mean successes (1 - p) / p.
pub fn negbin_failures<R: Rng + ?Sized>(rng: &mut R, successes: f64, p: f64) -> u64 {
    if p >= 1.0 || successes <= 0.0 {
        return 0;
    }
    let lambda = gamma(rng, successes, p / (1.0 - p));
    poisson(rng, lambda)
}

pub fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Multinomial draw by sequential conditional binomials. `probs` need not
/// be normalized.
pub fn multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut remaining_n = n;
    let mut remaining_mass: f64 = probs.iter().sum();
    for (i, &p) in probs.iter().enumerate() {
        if remaining_n == 0 {
            break;
        }
        if i + 1 == probs.len() {
            out[i] = remaining_n;
            break;
        }
        let q = if remaining_mass > 0.0 { (p / remaining_mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = binomial(rng, remaining_n, q);
        out[i] = k;
        remaining_n -= k;
        remaining_mass -= p;
    }
    out
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let xs = sorted(samples);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let above = (i as f64 + 1.0) / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Minimize a unimodal function on `[lo, hi]` by golden-section search.
pub fn golden_section(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while (hi - lo).abs() > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}
