//! Predict-then-optimize inventory planning for lost-sales, periodic-review
//! retail replenishment.
//!
//! The crate is organised as a pipeline:
//!
//! - [`panel`] loads weekly sales and availability and exposes the censoring-aware
//!   effective demand view.
//! - [`features`] turns every series into scaled tabular rows with recency weights.
//! - [`gbdt`] is the histogram gradient-boosted tree learner used per horizon.
//! - [`forecast`] runs the direct multi-horizon training protocol and the
//!   seasonal moving-average baseline.
//! - [`policy`] projects inventory to the delivery week and turns forecasts into
//!   orders; it also holds the coverage benchmark.
//! - [`simulator`] executes the lost-sales dynamics and accumulates costs.
//! - [`pipeline`] wires everything into backtests and replays.

pub mod error;
pub mod features;
pub mod forecast;
pub mod gbdt;
pub mod manifest;
pub mod panel;
pub mod pipeline;
pub mod policy;
pub mod seed;
pub mod simulator;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
