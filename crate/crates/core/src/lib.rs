//! Bayesian principal stratification with a network mediator for clustered
//! encouragement designs.
//!
//! The model and sampler are generic over the scalar type; [`Parameters`]
//! and [`Draws`] fix it to `f64`.

pub mod error;
pub mod estimands;
pub mod model;
pub mod posterior;
pub mod scalar;
pub mod simulate;
pub mod strata;
pub mod study;

pub use error::{Error, Result};

pub type Parameters = model::ModelParams<f64>;
pub type Parameters32 = model::ModelParams<f32>;
pub type Draws = posterior::Draws<f64>;
