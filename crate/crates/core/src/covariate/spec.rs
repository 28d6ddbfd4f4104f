//! Model specification and the design layout of the log-linear predictor.

use serde::{Deserialize, Serialize};

use crate::data::{CovariatePanel, Iso3, PandemicMonth, PANDEMIC_MONTHS};
use crate::error::{Error, Result};

/// A time-varying covariate, optionally multiplied by a constant indicator
/// (an income-group interaction). Each term gets an overall coefficient and
/// a zero-sum RW2 deviation path over the 24 pandemic months.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeVaryingTerm {
    pub covariate: String,
    #[serde(default)]
    pub interaction: Option<String>,
}

impl TimeVaryingTerm {
    pub fn main(covariate: &str) -> Self {
        Self { covariate: covariate.into(), interaction: None }
    }

    pub fn interacted(covariate: &str, indicator: &str) -> Self {
        Self { covariate: covariate.into(), interaction: Some(indicator.into()) }
    }

    pub fn label(&self) -> String {
        match &self.interaction {
            Some(i) => format!("{}:{}", self.covariate, i),
            None => self.covariate.clone(),
        }
    }
}

/// Penalized-complexity prior Pr(σ > u) = α, i.e. an exponential density
/// on σ with rate −ln(α)/u.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcPrior {
    pub u: f64,
    pub alpha: f64,
}

impl PcPrior {
    pub fn rate(&self) -> f64 {
        -self.alpha.ln() / self.u
    }

    pub fn ln_density(&self, sigma: f64) -> f64 {
        let r = self.rate();
        r.ln() - r * sigma
    }
}

impl Default for PcPrior {
    fn default() -> Self {
        Self { u: 1.0, alpha: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub time_varying: Vec<TimeVaryingTerm>,
    pub constant: Vec<String>,
    #[serde(default)]
    pub sigma_beta_prior: PcPrior,
    #[serde(default)]
    pub sigma_eps_prior: PcPrior,
    #[serde(default = "default_fixed_sd")]
    pub fixed_effect_sd: f64,
}

fn default_fixed_sd() -> f64 {
    31.6
}

impl Default for ModelSpec {
    fn default() -> Self {
        let tv = ["containment", "sqrt_covid_death_rate", "temperature", "test_positivity"];
        let mut time_varying = Vec::new();
        for c in tv {
            time_varying.push(TimeVaryingTerm::main(c));
            time_varying.push(TimeVaryingTerm::interacted(c, "high_income"));
        }
        Self {
            time_varying,
            constant: vec!["diabetes_rate".into(), "cardiovascular_rate".into(), "high_income".into()],
            sigma_beta_prior: PcPrior::default(),
            sigma_eps_prior: PcPrior::default(),
            fixed_effect_sd: default_fixed_sd(),
        }
    }
}

/// Column layout: `[intercept, constants (G), overall effects (B), paths (B × 24)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub constants: usize,
    pub terms: usize,
}

impl Layout {
    pub fn of(spec: &ModelSpec) -> Self {
        Self { constants: spec.constant.len(), terms: spec.time_varying.len() }
    }

    /// Columns carrying the weakly informative normal prior.
    pub fn fixed(&self) -> usize {
        1 + self.constants + self.terms
    }

    pub fn len(&self) -> usize {
        self.fixed() + self.terms * PANDEMIC_MONTHS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overall(&self, b: usize) -> usize {
        1 + self.constants + b
    }

    pub fn path(&self, b: usize, t: usize) -> usize {
        self.fixed() + b * PANDEMIC_MONTHS + t
    }

    pub fn fixed_names(&self, spec: &ModelSpec) -> Vec<String> {
        let mut names = vec!["alpha".to_string()];
        names.extend(spec.constant.iter().map(|g| format!("gamma[{g}]")));
        names.extend(spec.time_varying.iter().map(|b| format!("gamma[{}]", b.label())));
        names
    }
}

/// Non-zero entries of one design row.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignRow {
    pub fixed: Vec<f64>,
    /// `(column, value)` for each term's path entry at month t.
    pub path: Vec<(usize, f64)>,
}

impl DesignRow {
    pub fn dot(&self, coef: &[f64]) -> f64 {
        let mut s: f64 = self.fixed.iter().zip(coef).map(|(a, b)| a * b).sum();
        for &(j, v) in &self.path {
            s += v * coef[j];
        }
        s
    }

    pub fn dense(&self, layout: &Layout) -> Vec<f64> {
        let mut row = vec![0.0; layout.len()];
        row[..self.fixed.len()].copy_from_slice(&self.fixed);
        for &(j, v) in &self.path {
            row[j] = v;
        }
        row
    }
}

impl ModelSpec {
    pub fn validate(&self, panel: &CovariatePanel) -> Result<()> {
        for b in &self.time_varying {
            if panel.time_varying(&b.covariate).is_none() {
                return Err(Error::Validation(format!("unknown time-varying covariate '{}'", b.covariate)));
            }
            if let Some(i) = &b.interaction {
                if panel.constant(i).is_none() {
                    return Err(Error::Validation(format!("unknown interaction indicator '{i}'")));
                }
            }
        }
        for g in &self.constant {
            if panel.constant(g).is_none() {
                return Err(Error::Validation(format!("unknown constant covariate '{g}'")));
            }
        }
        Ok(())
    }

    pub fn design_row(&self, panel: &CovariatePanel, c: &Iso3, t: PandemicMonth) -> Result<DesignRow> {
        let layout = Layout::of(self);
        let mut fixed = Vec::with_capacity(layout.fixed());
        fixed.push(1.0);
        for g in &self.constant {
            fixed.push(panel.z(g, c)?);
        }
        let mut path = Vec::with_capacity(layout.terms);
        for (b, term) in self.time_varying.iter().enumerate() {
            let mut x = panel.x(&term.covariate, c, t)?;
            if let Some(i) = &term.interaction {
                x *= panel.z(i, c)?;
            }
            fixed.push(x);
            path.push((layout.path(b, t.offset()), x));
        }
        Ok(DesignRow { fixed, path })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pc_prior_tail_mass() {
        let p = PcPrior::default();
        assert!((p.rate() - 4.60517).abs() < 1e-5);
        // Integrate the implemented density over (1, ∞) numerically.
        let (mut tail, h) = (0.0, 1e-4);
        let mut s = 1.0 + h / 2.0;
        while s < 12.0 {
            tail += p.ln_density(s).exp() * h;
            s += h;
        }
        assert!((tail - 0.01).abs() < 1e-6, "{tail}");
    }

    #[test]
    fn layout_indices() {
        let spec = ModelSpec {
            time_varying: vec![TimeVaryingTerm::main("a"), TimeVaryingTerm::interacted("a", "hi")],
            constant: vec!["g".into()],
            ..ModelSpec::default()
        };
        let l = Layout::of(&spec);
        assert_eq!(l.fixed(), 4);
        assert_eq!(l.len(), 4 + 48);
        assert_eq!(l.overall(1), 3);
        assert_eq!(l.path(1, 23), 51);
        assert_eq!(l.fixed_names(&spec), vec!["alpha", "gamma[g]", "gamma[a]", "gamma[a:hi]"]);
    }
}
