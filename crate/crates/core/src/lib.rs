//! Simulation and recurrence diagnostics for `d`-dimensional diffusions whose
//! drift switches between a recurrent and a transient regime at
//! state-dependent rates.
//!
//! - [`model`]: closed drift/intensity/diffusion families, their analytic
//!   bounds, and the recurrence criterion with its explicit bound constants.
//! - [`simulate`]: Euler–Maruyama paths with exact-time switching by thinning.
//! - [`embedded`]: the chain at switching times, holding times, occupation near the origin.
//! - [`estimate`]: Monte Carlo estimators for hitting times, drift of `|X|²`,
//!   and occupation histograms.
//! - [`stats`]: sample summaries and Kolmogorov–Smirnov tests.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embedded;
pub mod error;
pub mod estimate;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    build_model, check_recurrence_criterion, compute_eps_q_c, reference_spec, BalanceConstants,
    CriterionReport, DiffusionFamily, DriftFamily, IntensityFamily, ModelSpec, Orientation, Regime,
    SwitchingDiffusionModel,
};
pub use simulate::{simulate_path, simulate_until_hit, HitResult, PathRecord, SimParams, SwitchEvent};
pub use stats::MCEstimate;
