use std::fs;
use std::path::Path;

use netstrat::estimands::{default_requests, Estimand, DEFAULT_CONTRASTS, DEFAULT_S_GRID};
use netstrat::model::{FitConfig, PriorConfig, SlopeTying};
use netstrat::posterior::SamplerConfig;
use netstrat::simulate::SimConfig;
use netstrat::study::{Arm, CovariateSelection};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Estimand requests: explicit, or the default family over contrasts and a
/// mediator grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimandConfig {
    pub s_grid: Vec<f64>,
    /// `(z, z')` encouragement levels.
    pub contrasts: Vec<(u8, u8)>,
    pub requests: Option<Vec<Estimand>>,
    pub seed: u64,
}

impl Default for EstimandConfig {
    fn default() -> Self {
        EstimandConfig {
            s_grid: DEFAULT_S_GRID.to_vec(),
            contrasts: DEFAULT_CONTRASTS.iter().map(|(a, b)| (a.level(), b.level())).collect(),
            requests: None,
            seed: 1,
        }
    }
}

impl EstimandConfig {
    pub fn resolve(&self) -> Result<Vec<Estimand>, CliError> {
        if let Some(r) = &self.requests {
            return Ok(r.clone());
        }
        let arm =
            |l: u8| Arm::from_level(l).ok_or_else(|| CliError::usage(format!("encouragement level {l} not in 1..=3")));
        let contrasts = self
            .contrasts
            .iter()
            .map(|&(a, b)| Ok((arm(a)?, arm(b)?)))
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(default_requests(&contrasts, &self.s_grid))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub states: usize,
    pub step: f64,
    pub rel_tolerance: f64,
    pub abs_floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            states: 20,
            step: 1e-5,
            rel_tolerance: 1e-5,
            abs_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomConfig {
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for MomConfig {
    fn default() -> Self {
        MomConfig {
            bootstrap: netstrat::strata::DEFAULT_BOOTSTRAP,
            seed: 1,
        }
    }
}

/// Contents of `--config`; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sampler: SamplerConfig,
    pub prior: PriorConfig,
    pub tying: SlopeTying,
    pub covariates: CovariateSelection,
    pub estimands: EstimandConfig,
    pub simulation: SimConfig,
    pub gradcheck: GradcheckConfig,
    pub mom: MomConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("read {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    /// Applies a single seed to every random component.
    pub fn set_seed(&mut self, seed: u64) {
        self.sampler.seed = seed;
        self.simulation.seed = seed;
        self.estimands.seed = seed;
        self.mom.seed = seed;
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            sampler: self.sampler.clone(),
            prior: self.prior,
            tying: self.tying,
        }
    }
}

/// Parses `0,0.1,0.2`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("'{v}' is not a number")))
        .collect()
}

/// Parses `2:1,3:2`.
pub fn parse_contrasts(s: &str) -> Result<Vec<(u8, u8)>, String> {
    s.split(',')
        .map(|pair| {
            let (a, b) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("contrast '{pair}' is not of the form z:z'"))?;
            let level = |v: &str| {
                v.trim()
                    .parse::<u8>()
                    .map_err(|_| format!("'{v}' is not an encouragement level"))
            };
            Ok((level(a)?, level(b)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lists() {
        assert_eq!(parse_grid("0, 0.5").unwrap(), vec![0.0, 0.5]);
        assert!(parse_grid("0,x").is_err());
        assert_eq!(parse_contrasts("2:1,3:2").unwrap(), vec![(2, 1), (3, 2)]);
        assert!(parse_contrasts("21").is_err());
    }

    #[test]
    fn config_roundtrip_and_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"sampler": {"chains": 2}}"#).unwrap();
        assert_eq!(c.sampler.chains, 2);
        assert_eq!(c.sampler.warmup, SamplerConfig::default().warmup);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<RunConfig>(r#"{"sampelr": {}}"#).is_err());
    }

    #[test]
    fn default_requests_resolve() {
        assert_eq!(EstimandConfig::default().resolve().unwrap().len(), 48);
        let bad = EstimandConfig {
            contrasts: vec![(4, 1)],
            ..Default::default()
        };
        assert!(bad.resolve().is_err());
    }
}
