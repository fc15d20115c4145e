//! Structural credit-risk engine for private companies.
//!
//! Market values of a private company's equity and liabilities are never
//! observed; only book values and payouts are. This crate links the two
//! through a log-linearised dividend discount model, recovers the latent
//! market-to-book multiplier with a Kalman filter and smoother, estimates the
//! parameters with EM, and prices the asset-value options that give equity,
//! debt and default probabilities in closed form.
//!
//! Modules:
//! - [`model`]: parameters, observed series, linearization constants
//! - [`state_space`]: filter, smoother, forecasts, likelihood
//! - [`em`]: expected complete-data likelihood and EM iteration
//! - [`pricing`]: risk-neutral moments, option prices, default probabilities
//! - [`sim`]: exact simulation, Gaussian conditioning oracle, Monte Carlo estimators

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod em;
pub mod error;
pub mod linalg;
pub mod model;
pub mod pricing;
pub mod sim;
pub mod state_space;

pub use error::{Component, Error, Result};
pub use model::{
    asset_center, asset_linearization, derive_series, AssetLinearization, LinearizationSchedule, Measure, ModelParams,
    ObservedSeries, PeriodLinearization,
};
