//! Run configuration, read from TOML with one section per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::covariate::ModelSpec;
use crate::error::{Error, Result};
use crate::excess::PointEstimate;
use crate::expected::TrendKind;
use crate::mcmc::McmcConfig;
use crate::subnational::{default_ar1_config, default_share_config, ConstrainedConfig};
use crate::validation::CvScheme;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Master seed; every stream is derived from it by label.
    pub seed: u64,
    /// Directory holding the input CSVs.
    pub data_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 20_200_101, data_dir: "data".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpectedSection {
    /// Force a trend kind for every country; unset selects per country.
    pub trend: Option<TrendKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaSection {
    /// Lognormal samples per month for moment matching.
    pub samples: usize,
}

impl Default for GammaSection {
    fn default() -> Self {
        Self { samples: crate::gamma::DEFAULT_SAMPLES }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateSection {
    pub model: ModelSpec,
    pub mcmc: McmcConfig,
}

impl Default for CovariateSection {
    fn default() -> Self {
        Self { model: ModelSpec::default(), mcmc: McmcConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubnationalSection {
    pub share_mcmc: McmcConfig,
    pub ar1_mcmc: McmcConfig,
    pub constrained: ConstrainedConfig,
}

impl Default for SubnationalSection {
    fn default() -> Self {
        Self { share_mcmc: default_share_config(), ar1_mcmc: default_ar1_config(), constrained: ConstrainedConfig::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcessSection {
    pub point: PointEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    pub scheme: CvScheme,
    /// Sampler settings for each fold's refit.
    pub fold_mcmc: McmcConfig,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self { scheme: CvScheme::Country, fold_mcmc: McmcConfig::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub expected: ExpectedSection,
    pub gamma: GammaSection,
    pub covariate: CovariateSection,
    pub subnational: SubnationalSection,
    pub excess: ExcessSection,
    pub validation: ValidationSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.samples < crate::gamma::MIN_SAMPLES {
            return Err(Error::Config(format!("gamma.samples must be at least {}", crate::gamma::MIN_SAMPLES)));
        }
        for (name, m) in [
            ("covariate.mcmc", &self.covariate.mcmc),
            ("subnational.share_mcmc", &self.subnational.share_mcmc),
            ("subnational.ar1_mcmc", &self.subnational.ar1_mcmc),
            ("validation.fold_mcmc", &self.validation.fold_mcmc),
        ] {
            if m.chains < 2 || m.draws < 4 || m.keep == 0 {
                return Err(Error::Config(format!("{name}: need at least 2 chains, 4 draws and 1 kept draw")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml();
        assert!(text.contains("[covariate.mcmc]") && text.contains("[run]"));
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = RunConfig::from_toml("[run]\nseed = 7\n[covariate.mcmc]\nchains = 2\n").unwrap();
        assert_eq!(c.run.seed, 7);
        assert_eq!(c.covariate.mcmc.chains, 2);
        assert_eq!(c.covariate.mcmc.warmup, McmcConfig::default().warmup);
        assert_eq!(c.subnational, SubnationalSection::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[run]\nsead = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[gamma]\nsamples = 10\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[validation]\nscheme = \"year\"\n"), Err(Error::Config(_))));
    }
}
