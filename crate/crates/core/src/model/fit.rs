//! Posterior sampling for a study.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{sample, Draws, SamplerConfig};
use crate::study::StudyData;

use super::likelihood::{LogPosterior, ModelInput};
use super::params::{Layout, ModelParams, PriorConfig, SlopeTying};

/// Everything needed to fit the model beyond the data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub sampler: SamplerConfig,
    pub prior: PriorConfig,
    pub tying: SlopeTying,
}

/// Samples the posterior and returns draws on the constrained scale,
/// named after [`Layout::names`].
pub fn fit(data: &StudyData, config: &FitConfig) -> Result<Draws<f64>> {
    let layout = Layout::for_study(data, config.tying);
    let target = LogPosterior::new(ModelInput::<f64>::from_study(data), layout.clone(), config.prior)?;
    let raw_names = (0..layout.dim()).map(|i| format!("theta[{i}]")).collect();
    let raw = sample(&target, &config.sampler, raw_names, None)?;
    raw.map(layout.names(), |theta| Ok(layout.flatten(&layout.constrain(theta)?)))
}

/// Parameter states of every draw, in chain-major order.
pub fn draws_to_params(layout: &Layout, draws: &Draws<f64>) -> Result<Vec<ModelParams<f64>>> {
    let expected = layout.names();
    if draws.names() != expected.as_slice() {
        let first = draws
            .names()
            .iter()
            .zip(&expected)
            .position(|(a, b)| a != b)
            .unwrap_or(draws.names().len().min(expected.len()));
        return Err(Error::validation(format!(
            "draws do not match the model for this study (column {} is '{}', expected '{}')",
            first,
            draws.names().get(first).map_or("<missing>", String::as_str),
            expected.get(first).map_or("<none>", String::as_str),
        )));
    }
    draws.iter().map(|row| layout.unflatten(row)).collect()
}
