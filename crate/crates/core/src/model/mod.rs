//! Strata and outcome models: parameters, densities and the log posterior.

mod density;
mod fit;
mod likelihood;
mod params;

pub(crate) use density::strata_log_probs;
pub use density::{conditional_uniform, poisson_mean, strata_probs, zip_cdf_interval, zip_log_pmf, zip_quantile};
pub use fit::{draws_to_params, fit, FitConfig};
pub use likelihood::{
    check_gradient, grad_log_posterior, log_jacobian, log_likelihood, log_prior, numeric_gradient, GradientCheck,
    LogPosterior, ModelInput, UnitRecord,
};
pub use params::{
    Layout, ModelParams, NamedParams, Offsets, OutcomeCell, PriorConfig, SlopeTying, LOGIT_STRATA, N_CELLS,
    PARAMS_FORMAT, PARAMS_VERSION,
};
