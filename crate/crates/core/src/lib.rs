//! Causal survival analysis of longitudinal transfusion cohorts.
//!
//! The crate covers the whole chain from a counting-process cohort table to a
//! hazard ratio:
//!
//! * [`data_model`] reads, validates and builds cohorts on the daily/28-day
//!   row grid,
//! * [`glm`] fits the multinomial treatment model behind the stabilized
//!   treatment weights,
//! * [`cox`] is a weighted, counting-process Cox engine with Breslow ties,
//!   cluster-robust variance and restricted cubic splines,
//! * [`weights`] builds treatment, censoring and combined weights plus their
//!   diagnostics,
//! * [`pipelines`] runs the restriction, time-varying and IPW marginal
//!   structural model analyses,
//! * [`simulator`] generates cohorts with a tunable treatment-confounder
//!   feedback loop and known truth,
//! * [`study`] repeats simulate-then-analyze for bias and coverage studies.

pub mod cox;
pub mod data_model;
pub mod design;
pub mod glm;
pub mod pipelines;
pub mod simulator;
pub mod stats;
pub mod study;
pub mod weights;

pub use data_model::{ArmCode, Cohort, IntervalRow, RawFollowup};
