//! Recovering uncensored pick-up demand at shared micro-mobility units.
//!
//! Observed pick-ups undercount demand whenever a unit runs out of vehicles.
//! The survival time of a vehicle at a unit, re-matched first-come
//! first-served against arriving users, follows the sojourn-time law of an
//! M/M/1/K queue in which vehicles are the customers and users are the
//! servers. Fitting that law by maximum likelihood yields the user arrival
//! rate directly.
//!
//! * [`distribution`]: steady-state law, survival CDF/PDF, likelihood and derivatives
//! * [`gvst`]: event streams and survival-time extraction
//! * [`estimators`]: two-sided, closed-form and Newton one-sided estimators
//! * [`simulator`]: discrete-event simulation of one unit
//! * [`ingestion`]: trip CSV parsing, station/grid binning, unit filtering
//! * [`evaluation`]: error metrics, KS test, stockout ratio, regression, sweeps

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distribution;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod gvst;
pub mod ingestion;
mod numerics;
pub mod simulator;

pub use distribution::{
    gvst_cdf, gvst_pdf, log_likelihood, one_sided_log_likelihood, sample_gvst, stationarity_residuals,
    steady_state_probs, FqmParams, LikelihoodEvaluation, OneSidedEvaluation, StateDistribution,
};
pub use error::{FqmError, Result};
pub use estimators::{
    estimate_one_sided_closed_form, estimate_one_sided_newton, estimate_two_sided, Bounds, EstimationMethod,
    EstimationResult, EstimatorConfig,
};
pub use gvst::{
    extract_gvst, split_events, EventKind, EventStream, GvstCollection, Timestamp, TripEvent, UnitObservation, Window,
};
pub use numerics::log_sum_exp;
