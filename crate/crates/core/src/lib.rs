//! Differentially private gradient descent with influence-shaped noise
//! schedules.
//!
//! Budgets are in R-units: a step with noise scale `sigma` costs
//! `1 / sigma^2`, and a run that spends `R` is `R / 2`-zCDP.

// Guards like `!(x > 0.0)` are written that way to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::approx_constant))]

pub mod accountant;
pub mod analysis;
pub mod error;
pub mod harness;
pub mod influence;
pub mod models;
pub mod optimizer;
pub mod schedules;
pub mod seed;
pub mod stats;

pub use accountant::{PrivacyLedger, StepCost};
pub use error::{Error, Result};
pub use influence::InfluenceProfile;
pub use models::{Dataset, LossKind, LossModel, Spectrum};
pub use optimizer::{RunConfig, RunRecord, StepSize};
pub use schedules::{NoiseSchedule, Recipe};
